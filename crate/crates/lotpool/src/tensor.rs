//! Dense tensors and named parameter sets.
//!
//! Everything downstream (models, pruning, pooling) operates on these two
//! types. Storage is 32-bit; binary operations accumulate in 64-bit and round
//! once on store, which is what makes the interpolation identities below hold
//! bit-exactly.

use crate::error::{Error, Result};

/// A dense row-major array of `f32` with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` has exactly `product(shape)`
    /// elements and that every dimension is positive.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Domain(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Domain(format!(
                "tensor data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor dimensions must be positive, got {shape:?}"
        );
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// An ordered, named collection of tensors: the full weight/bias state of one
/// network.
///
/// Order is the model's definition order and is part of the identity: two
/// ParamSets are *aligned* iff names, order, and shapes all match, and every
/// binary operation requires alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Domain(format!(
                    "duplicate parameter name {name:?}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Number of named entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count d across all entries.
    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Checks name/order/shape alignment, reporting the first mismatch.
    pub fn ensure_aligned(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Misaligned(format!(
                "entry count {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (i, ((na, ta), (nb, tb))) in
            self.entries.iter().zip(other.entries.iter()).enumerate()
        {
            if na != nb {
                return Err(Error::Misaligned(format!(
                    "entry {i}: name {na:?} vs {nb:?}"
                )));
            }
            if ta.shape() != tb.shape() {
                return Err(Error::Misaligned(format!(
                    "entry {i} ({na:?}): shape {:?} vs {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Linear interpolation `alpha * a + (1 - alpha) * b`, elementwise.
///
/// `alpha` weights the *first* argument. Endpoints are returned bit-exactly;
/// interior points are computed with 64-bit intermediates and rounded once.
pub fn lerp(a: &ParamSet, b: &ParamSet, alpha: f64) -> Result<ParamSet> {
    a.ensure_aligned(b)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!(
            "interpolation coefficient must lie in [0, 1], got {alpha}"
        )));
    }
    if alpha == 1.0 {
        return Ok(a.clone());
    }
    if alpha == 0.0 {
        return Ok(b.clone());
    }
    let wa = alpha;
    let wb = 1.0 - wa;
    let entries = a
        .entries
        .iter()
        .zip(b.entries.iter())
        .map(|((name, ta), (_, tb))| {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| (wa * f64::from(x) + wb * f64::from(y)) as f32)
                .collect();
            (
                name.clone(),
                Tensor {
                    shape: ta.shape.clone(),
                    data,
                },
            )
        })
        .collect();
    Ok(ParamSet { entries })
}

/// Weighted sum `c_acc * acc + c_x * x`, elementwise.
///
/// Shared kernel for the running-average baselines. Unlike [`lerp`] the
/// coefficients are unconstrained (any finite values), so the result is
/// checked for overflow.
pub fn scale_add(acc: &ParamSet, x: &ParamSet, c_acc: f64, c_x: f64) -> Result<ParamSet> {
    acc.ensure_aligned(x)?;
    if !c_acc.is_finite() || !c_x.is_finite() {
        return Err(Error::Domain(format!(
            "scale_add coefficients must be finite, got ({c_acc}, {c_x})"
        )));
    }
    let mut out = Vec::with_capacity(acc.entries.len());
    for ((name, ta), (_, tx)) in acc.entries.iter().zip(x.entries.iter()) {
        let mut data = Vec::with_capacity(ta.len());
        for (&a, &b) in ta.data().iter().zip(tx.data()) {
            let v = (c_acc * f64::from(a) + c_x * f64::from(b)) as f32;
            if !v.is_finite() {
                return Err(Error::Domain(format!(
                    "scale_add overflowed 32-bit range in entry {name:?}"
                )));
            }
            data.push(v);
        }
        out.push((
            name.clone(),
            Tensor {
                shape: ta.shape.clone(),
                data,
            },
        ));
    }
    Ok(ParamSet { entries: out })
}
