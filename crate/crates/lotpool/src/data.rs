//! Dataset ingestion (IDX files), synthetic data generation, and splits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A labelled classification dataset with features scaled to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Tensor, // [N, d_in]
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Domain(format!(
                "dataset features must be [N, d_in], got shape {:?}",
                features.shape()
            )));
        }
        let n = features.shape()[0];
        if n == 0 || labels.len() != n {
            return Err(Error::Domain(format!(
                "dataset has {} feature rows but {} labels",
                n,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if features.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset features must be finite".into()));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimensionality d_in.
    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.features.data()[i * d..(i + 1) * d]
    }

    /// New dataset holding the given rows, in order.
    pub fn gather(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Domain("cannot gather an empty dataset".into()));
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(
            Tensor::new(vec![indices.len(), d], data)?,
            labels,
            self.n_classes,
        )
    }

    /// First `n` samples, used by the CLI's `--limit` flag.
    pub fn take_first(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::Domain(format!(
                "limit {n} out of range for dataset of {}",
                self.len()
            )));
        }
        let idx: Vec<usize> = (0..n).collect();
        self.gather(&idx)
    }

    /// Content hash over dimensions, features, and labels; pinned in run
    /// manifests so later pipeline stages can verify they see the same data.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        h.update((self.n_classes as u64).to_le_bytes());
        for v in self.features.data() {
            h.update(v.to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct IdxReader<R> {
    inner: R,
    offset: u64,
    path: String,
}

impl<R: Read> IdxReader<R> {
    fn new(inner: R, path: &Path) -> Self {
        Self {
            inner,
            offset: 0,
            path: path.display().to_string(),
        }
    }

    fn fail(&self, reason: String) -> Error {
        Error::Format {
            offset: self.offset,
            reason: format!("{}: {reason}", self.path),
        }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                Err(self.fail("truncated file".into()))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn read_u32_be(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_be_bytes(b))
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.fail("trailing bytes after payload".into())),
            Err(e) => Err(e.into()),
        }
    }
}

/// Loads an MNIST-style IDX image/label file pair.
///
/// Big-endian headers: magic `0x00000803` with dims `[count, rows, cols]` for
/// images, `0x00000801` with `[count]` for labels. Pixels are scaled by 1/255
/// and images flattened row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut ir = IdxReader::new(BufReader::new(File::open(images_path)?), images_path);
    let magic = ir.read_u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        ir.offset = 0;
        return Err(ir.fail(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = ir.read_u32_be()? as usize;
    let rows = ir.read_u32_be()? as usize;
    let cols = ir.read_u32_be()? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        ir.offset = 4;
        return Err(ir.fail(format!("degenerate image dims {count}x{rows}x{cols}")));
    }
    let mut pixels = vec![0u8; count * rows * cols];
    ir.read_exact(&mut pixels)?;
    ir.expect_eof()?;

    let mut lr = IdxReader::new(BufReader::new(File::open(labels_path)?), labels_path);
    let magic = lr.read_u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        lr.offset = 0;
        return Err(lr.fail(format!(
            "bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let label_count = lr.read_u32_be()? as usize;
    if label_count != count {
        lr.offset = 4;
        return Err(lr.fail(format!(
            "label count {label_count} does not match image count {count}"
        )));
    }
    let mut raw_labels = vec![0u8; label_count];
    lr.read_exact(&mut raw_labels)?;
    lr.expect_eof()?;

    let features: Vec<f32> = pixels.iter().map(|&b| f32::from(b) / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(
        Tensor::new(vec![count, rows * cols], features)?,
        labels,
        n_classes,
    )
}

/// Writes a dataset as an IDX image/label file pair (inverse of [`load_idx`]).
///
/// `rows * cols` must equal the feature dimension; feature values are
/// quantized to bytes with `round(v * 255)`.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != ds.dim() {
        return Err(Error::Domain(format!(
            "{rows}x{cols} does not match feature dimension {}",
            ds.dim()
        )));
    }
    if ds.n_classes() > 256 {
        return Err(Error::Domain("IDX labels are bytes; need n_classes <= 256".into()));
    }
    let mut iw = BufWriter::new(File::create(images_path)?);
    iw.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    iw.write_all(&(ds.len() as u32).to_be_bytes())?;
    iw.write_all(&(rows as u32).to_be_bytes())?;
    iw.write_all(&(cols as u32).to_be_bytes())?;
    let bytes: Vec<u8> = ds
        .features()
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    iw.write_all(&bytes)?;
    iw.flush()?;

    let mut lw = BufWriter::new(File::create(labels_path)?);
    lw.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lw.write_all(&(ds.len() as u32).to_be_bytes())?;
    let labels: Vec<u8> = ds.labels().iter().map(|&l| l as u8).collect();
    lw.write_all(&labels)?;
    lw.flush()?;
    Ok(())
}

/// Synthetic Gaussian-blob classification data.
///
/// Class `c` is centered at a deterministic unit-norm direction (derived from
/// `c` alone) scaled by 2, with isotropic noise of standard deviation
/// `spread`. Samples are generated class-major, `n_per_class` each.
pub fn synth_gaussians(
    n_classes: usize,
    d_in: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes == 0 || d_in == 0 || n_per_class == 0 {
        return Err(Error::Domain(
            "n_classes, d_in and n_per_class must be positive".into(),
        ));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(Error::Domain(format!("spread must be >= 0, got {spread}")));
    }
    let centers: Vec<Vec<f32>> = (0..n_classes).map(|c| class_center(c, d_in)).collect();

    let n = n_classes * n_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d_in);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in center {
                let noise: f64 = if spread == 0.0 {
                    0.0
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    spread * z
                };
                data.push((f64::from(m) + noise) as f32);
            }
            labels.push(c);
        }
    }
    Dataset::new(Tensor::new(vec![n, d_in], data)?, labels, n_classes)
}

/// Unit-norm direction for class `c`, scaled by 2. Depends only on `c` and
/// `d_in`, not on the dataset seed.
fn class_center(c: usize, d_in: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c6f_7470 ^ c as u64);
    loop {
        let v: Vec<f64> = (0..d_in).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.iter().map(|x| (2.0 * x / norm) as f32).collect();
        }
    }
}

/// Deterministic shuffle-and-split into `(train, val)`.
///
/// The first `round(val_fraction * N)` shuffled samples become the validation
/// split; the two parts are disjoint and exhaustive.
pub fn split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let n = dataset.len();
    let k = (val_fraction * n as f64 + 0.5).floor() as usize;
    if k == 0 || k == n {
        return Err(Error::Domain(format!(
            "split of {n} samples at fraction {val_fraction} leaves an empty part"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let val = dataset.gather(&indices[..k])?;
    let train = dataset.gather(&indices[k..])?;
    Ok((train, val))
}
