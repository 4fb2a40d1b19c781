//! Magnitude-based pruning masks.
//!
//! Masks cover the weight matrices of a [`ParamSet`] — every tensor of rank
//! >= 2, in definition order. Rank-1 tensors (biases) are never pruned and
//! pass through [`apply_mask`] untouched.
//!
//! Ranking is global across all covered tensors. Ties on equal magnitude are
//! broken by (tensor order, flat index) ascending, i.e. among equal
//! magnitudes the earliest position is pruned first.

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

/// True for tensors covered by masks (weight matrices).
pub fn is_weight_tensor(t: &Tensor) -> bool {
    t.rank() >= 2
}

/// Binary tensors aligned with the weight tensors of a ParamSet.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    entries: Vec<(String, Tensor)>,
}

impl Mask {
    /// Builds a mask, checking that every element is 0 or 1 and that at
    /// least one weight is kept.
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Domain("mask must cover at least one tensor".into()));
        }
        let mut kept = 0usize;
        for (name, t) in &entries {
            for &v in t.data() {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Domain(format!(
                        "mask entry {name:?} contains non-binary value {v}"
                    )));
                }
                kept += (v == 1.0) as usize;
            }
        }
        if kept == 0 {
            return Err(Error::DegenerateMask("mask keeps no weights".into()));
        }
        Ok(Self { entries })
    }

    /// All-ones mask over the weight tensors of `params`.
    pub fn full_for(params: &ParamSet) -> Result<Self> {
        let entries: Vec<(String, Tensor)> = params
            .iter()
            .filter(|(_, t)| is_weight_tensor(t))
            .map(|(n, t)| (n.to_string(), Tensor::filled(t.shape().to_vec(), 1.0)))
            .collect();
        if entries.is_empty() {
            return Err(Error::Domain(
                "parameter set has no weight tensors to mask".into(),
            ));
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn kept_count(&self) -> usize {
        self.entries
            .iter()
            .map(|(_, t)| t.data().iter().filter(|&&v| v == 1.0).count())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Fraction of weights kept, in (0, 1].
    pub fn density(&self) -> f64 {
        self.kept_count() as f64 / self.total_count() as f64
    }

    /// True if every kept position of `self` is also kept by `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((na, ta), (nb, tb))| {
                    na == nb
                        && ta.shape() == tb.shape()
                        && ta
                            .data()
                            .iter()
                            .zip(tb.data())
                            .all(|(&a, &b)| a == 0.0 || b == 1.0)
                })
    }

    /// Checks that this mask matches the weight tensors of `params` by name,
    /// order, and shape.
    pub fn ensure_aligned_with(&self, params: &ParamSet) -> Result<()> {
        let weights: Vec<(&str, &Tensor)> = params
            .iter()
            .filter(|(_, t)| is_weight_tensor(t))
            .collect();
        if weights.len() != self.entries.len() {
            return Err(Error::Misaligned(format!(
                "mask covers {} tensors but params have {} weight tensors",
                self.entries.len(),
                weights.len()
            )));
        }
        for (i, ((mn, mt), (pn, pt))) in self.entries.iter().zip(weights).enumerate() {
            if mn != pn {
                return Err(Error::Misaligned(format!(
                    "mask entry {i}: name {mn:?} vs weight {pn:?}"
                )));
            }
            if mt.shape() != pt.shape() {
                return Err(Error::Misaligned(format!(
                    "mask entry {i} ({mn:?}): shape {:?} vs {:?}",
                    mt.shape(),
                    pt.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Position of one weight: (tensor index within the mask, flat index).
type Pos = (usize, usize);

/// Kept positions ranked ascending by (|w|, tensor order, flat index).
fn ranked_kept_positions(params: &ParamSet, mask: &Mask) -> Vec<(f32, Pos)> {
    let weights: Vec<&Tensor> = params
        .iter()
        .filter(|(_, t)| is_weight_tensor(t))
        .map(|(_, t)| t)
        .collect();
    let mut ranked = Vec::new();
    for (ti, (w, (_, m))) in weights.iter().zip(mask.entries.iter()).enumerate() {
        for (fi, (&wv, &mv)) in w.data().iter().zip(m.data()).enumerate() {
            if mv == 1.0 {
                ranked.push((wv.abs(), (ti, fi)));
            }
        }
    }
    ranked.sort_unstable_by(|a, b| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    });
    ranked
}

fn clear_positions(mask: &Mask, to_prune: &[Pos]) -> Result<Mask> {
    let mut entries = mask.entries.clone();
    for &(ti, fi) in to_prune {
        entries[ti].1.data_mut()[fi] = 0.0;
    }
    Mask::new(entries)
}

/// Prunes the `floor(p * kept)` smallest-magnitude currently-kept weights.
///
/// `p` is a fraction of the *remaining* weights, so repeated calls give the
/// geometric density sequence (1-p)^t.
pub fn prune_fraction(params: &ParamSet, mask: &Mask, p: f64) -> Result<Mask> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "prune fraction must lie in (0, 1), got {p}"
        )));
    }
    mask.ensure_aligned_with(params)?;
    let kept = mask.kept_count();
    // The nudge tolerates representation error in p (0.3 * 10 must prune 3).
    let n_prune = (p * kept as f64 + 1e-9).floor() as usize;
    if n_prune >= kept {
        return Err(Error::DegenerateMask(format!(
            "pruning {n_prune} of {kept} kept weights would empty the mask"
        )));
    }
    let ranked = ranked_kept_positions(params, mask);
    let to_prune: Vec<Pos> = ranked[..n_prune].iter().map(|&(_, pos)| pos).collect();
    clear_positions(mask, &to_prune)
}

/// Shrinks the mask to exactly `target_kept` weights, dropping the
/// smallest-magnitude kept positions. The result is a subset of `mask`.
pub fn prune_to_kept_count(params: &ParamSet, mask: &Mask, target_kept: usize) -> Result<Mask> {
    mask.ensure_aligned_with(params)?;
    let kept = mask.kept_count();
    if target_kept == 0 {
        return Err(Error::DegenerateMask(
            "target kept count of 0 would empty the mask".into(),
        ));
    }
    if target_kept > kept {
        return Err(Error::Domain(format!(
            "target kept count {target_kept} exceeds current kept count {kept}"
        )));
    }
    if target_kept == kept {
        return Ok(mask.clone());
    }
    let ranked = ranked_kept_positions(params, mask);
    let to_prune: Vec<Pos> = ranked[..kept - target_kept]
        .iter()
        .map(|&(_, pos)| pos)
        .collect();
    clear_positions(mask, &to_prune)
}

/// Keeps exactly `keep` largest-magnitude weights globally, zeroing the rest.
///
/// Unlike [`prune_fraction`] this ranks *all* weight positions, not just
/// currently-kept ones. Returns the pruned parameters and the matching mask.
pub fn prune_to_count(params: &ParamSet, keep: usize) -> Result<(ParamSet, Mask)> {
    let full = Mask::full_for(params)?;
    let total = full.total_count();
    if keep == 0 {
        return Err(Error::DegenerateMask(
            "keep count of 0 would empty the mask".into(),
        ));
    }
    if keep > total {
        return Err(Error::Domain(format!(
            "keep count {keep} exceeds total weight count {total}"
        )));
    }
    let mask = prune_to_kept_count(params, &full, keep)?;
    let pruned = apply_mask(params, &mask)?;
    Ok((pruned, mask))
}

/// Prunes to an absolute density: keeps `round(target_density * total)`
/// largest-magnitude weights globally. `target_density = 1` is the identity.
pub fn prune_to_density(params: &ParamSet, target_density: f64) -> Result<(ParamSet, Mask)> {
    if !(target_density > 0.0 && target_density <= 1.0) {
        return Err(Error::Domain(format!(
            "target density must lie in (0, 1], got {target_density}"
        )));
    }
    let full = Mask::full_for(params)?;
    let total = full.total_count();
    // Round half up, per the documented cross-implementation rounding rule.
    let keep = (target_density * total as f64 + 0.5).floor() as usize;
    prune_to_count(params, keep.min(total))
}

/// Elementwise product on weight tensors; biases pass through.
///
/// Masked positions are written as +0.0 so the operation is idempotent at the
/// bit level.
pub fn apply_mask(params: &ParamSet, mask: &Mask) -> Result<ParamSet> {
    mask.ensure_aligned_with(params)?;
    let mut wi = 0usize;
    let mut out = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        if is_weight_tensor(t) {
            let m = &mask.entries[wi].1;
            wi += 1;
            let data = t
                .data()
                .iter()
                .zip(m.data())
                .map(|(&w, &b)| if b == 0.0 { 0.0 } else { w })
                .collect();
            out.push((name.to_string(), Tensor::new(t.shape().to_vec(), data)?));
        } else {
            out.push((name.to_string(), t.clone()));
        }
    }
    ParamSet::new(out)
}

/// Fraction of nonzero weights in a ParamSet (biases excluded).
pub fn weight_density(params: &ParamSet) -> f64 {
    let mut nonzero = 0usize;
    let mut total = 0usize;
    for (_, t) in params.iter() {
        if is_weight_tensor(t) {
            total += t.len();
            nonzero += t.data().iter().filter(|&&v| v != 0.0).count();
        }
    }
    if total == 0 {
        return 0.0;
    }
    nonzero as f64 / total as f64
}
