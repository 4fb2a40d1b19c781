//! Bit-exact checkpoint and run-manifest persistence.
//!
//! Checkpoint files ("LPCK") are little-endian: magic, version u32, a
//! length-prefixed `key=value` metadata block, tensor count u32, then per
//! tensor a length-prefixed name, a dtype tag (1 = f32, 2 = bit-packed mask,
//! 8 per byte LSB-first), ndim u32, dims u32[], and raw data. The file ends
//! with a CRC32 of everything before it; `load(save(x)) == x` bit-exactly.
//!
//! Masks are stored explicitly rather than inferred from zero weights,
//! because an unpruned weight may legitimately be 0.0.

use std::path::{Path, PathBuf};

use crate::config::{imp_config_from_kv, imp_config_to_kv, DataRef};
use crate::error::{Error, Result};
use crate::imp::{ImpConfig, ImpRun};
use crate::pruning::Mask;
use crate::tensor::{ParamSet, Tensor};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"LPCK";
const DTYPE_F32: u8 = 1;
const DTYPE_MASK: u8 = 2;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const REWIND_FILE: &str = "rewind.lpck";

/// Everything needed to reproduce and identify one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub imp_iteration: usize,
    pub density: f64,
    pub rewind_epoch: usize,
    pub prune_fraction: f64,
    pub layer_sizes: Vec<usize>,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

/// A persisted subnetwork: parameters, mask, and metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub mask: Mask,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    /// Structural invariants: mask aligned with the params, params exactly
    /// zero wherever the mask is zero, and the recorded density within one
    /// weight of the mask's.
    pub fn validate(&self) -> Result<()> {
        self.mask.ensure_aligned_with(&self.params)?;
        let weights = self
            .params
            .iter()
            .filter(|(_, t)| crate::pruning::is_weight_tensor(t));
        for ((name, t), (_, m)) in weights.zip(self.mask.entries()) {
            for (&w, &b) in t.data().iter().zip(m.data()) {
                if b == 0.0 && w != 0.0 {
                    return Err(Error::Domain(format!(
                        "checkpoint entry {name:?} has nonzero weight {w} at masked position"
                    )));
                }
            }
        }
        let total = self.mask.total_count() as f64;
        if (self.meta.density * total - self.mask.kept_count() as f64).abs() > 1.0 + 1e-6 {
            return Err(Error::Domain(format!(
                "checkpoint meta density {} is off by more than one weight from mask density {}",
                self.meta.density,
                self.mask.density()
            )));
        }
        Ok(())
    }
}

fn meta_to_lines(meta: &CheckpointMeta) -> String {
    let sizes: Vec<String> = meta.layer_sizes.iter().map(|d| d.to_string()).collect();
    format!(
        "imp_iteration={}\ndensity={}\nrewind_epoch={}\nprune_fraction={}\nlayer_sizes={}\ninit_seed={}\nshuffle_seed={}\n",
        meta.imp_iteration,
        meta.density,
        meta.rewind_epoch,
        meta.prune_fraction,
        sizes.join(","),
        meta.init_seed,
        meta.shuffle_seed,
    )
}

fn meta_from_lines(text: &str, offset: u64) -> Result<CheckpointMeta> {
    let fail = |reason: String| Error::Format { offset, reason };
    let mut meta = CheckpointMeta {
        imp_iteration: 0,
        density: 0.0,
        rewind_epoch: 0,
        prune_fraction: 0.0,
        layer_sizes: Vec::new(),
        init_seed: 0,
        shuffle_seed: 0,
    };
    let mut seen = std::collections::BTreeSet::new();
    for line in text.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail(format!("metadata line {line:?} is not key=value")))?;
        if !seen.insert(key.to_string()) {
            return Err(fail(format!("duplicate metadata key {key:?}")));
        }
        match key {
            "imp_iteration" => meta.imp_iteration = parse_num(key, value, offset)?,
            "density" => meta.density = parse_num(key, value, offset)?,
            "rewind_epoch" => meta.rewind_epoch = parse_num(key, value, offset)?,
            "prune_fraction" => meta.prune_fraction = parse_num(key, value, offset)?,
            "layer_sizes" => {
                meta.layer_sizes = value
                    .split(',')
                    .map(|s| parse_num(key, s, offset))
                    .collect::<Result<_>>()?;
            }
            "init_seed" => meta.init_seed = parse_num(key, value, offset)?,
            "shuffle_seed" => meta.shuffle_seed = parse_num(key, value, offset)?,
            other => return Err(fail(format!("unknown metadata key {other:?}"))),
        }
    }
    let required = [
        "imp_iteration",
        "density",
        "rewind_epoch",
        "prune_fraction",
        "layer_sizes",
        "init_seed",
        "shuffle_seed",
    ];
    for key in required {
        if !seen.contains(key) {
            return Err(fail(format!("missing metadata key {key:?}")));
        }
    }
    Ok(meta)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, offset: u64) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Format {
        offset,
        reason: format!("metadata key {key:?} has unparseable value {value:?}"),
    })
}

fn pack_bits(values: &[f32]) -> Vec<u8> {
    let mut out = vec![0u8; values.len().div_ceil(8)];
    for (i, &v) in values.iter().enumerate() {
        if v == 1.0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], count: usize, offset: u64) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        out.push(f32::from((bytes[i / 8] >> (i % 8)) & 1));
    }
    // Padding bits in the final byte must be zero.
    for i in count..bytes.len() * 8 {
        if (bytes[i / 8] >> (i % 8)) & 1 != 0 {
            return Err(Error::Format {
                offset,
                reason: "nonzero padding bits in packed mask".into(),
            });
        }
    }
    Ok(out)
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    fn tensor_header(&mut self, name: &str, dtype: u8, shape: &[usize]) {
        self.str(name);
        self.u8(dtype);
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u32(d as u32);
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: self.offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.buf.len() {
            return Err(self.fail(format!(
                "truncated: need {n} bytes but only {} remain",
                self.buf.len() - self.offset
            )));
        }
        let slice = &self.buf[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.offset as u64;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
            offset: at,
            reason: "invalid UTF-8 string".into(),
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(SCHEMA_VERSION);
    w.str(&meta_to_lines(&ckpt.meta));
    w.u32((ckpt.params.len() + ckpt.mask.entries().len()) as u32);
    for (name, t) in ckpt.params.iter() {
        w.tensor_header(name, DTYPE_F32, t.shape());
        for &v in t.data() {
            w.bytes(&v.to_le_bytes());
        }
    }
    for (name, t) in ckpt.mask.entries() {
        w.tensor_header(name, DTYPE_MASK, t.shape());
        w.bytes(&pack_bits(t.data()));
    }
    std::fs::write(path, w.finish())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, offset: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version = r.u32()?;
    if version != SCHEMA_VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported version {version}, expected {SCHEMA_VERSION}"),
        });
    }
    let meta_at = r.offset as u64 + 4;
    let meta_text = r.str()?;
    let meta = meta_from_lines(&meta_text, meta_at)?;

    let tensor_count = r.u32()? as usize;
    let mut param_entries = Vec::new();
    let mut mask_entries = Vec::new();
    for _ in 0..tensor_count {
        let name = r.str()?;
        let dtype = r.u8()?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(r.fail(format!("tensor {name:?} has invalid shape {shape:?}")));
        }
        let count: usize = shape.iter().product();
        let payload_at = r.offset as u64;
        match dtype {
            DTYPE_F32 => {
                let raw = r.take(count * 4)?;
                let data: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                param_entries.push((name, Tensor::new(shape, data)?));
            }
            DTYPE_MASK => {
                let raw = r.take(count.div_ceil(8))?;
                let data = unpack_bits(raw, count, payload_at)?;
                mask_entries.push((name, Tensor::new(shape, data)?));
            }
            other => {
                return Err(r.fail(format!("tensor {name:?} has unknown dtype tag {other}")));
            }
        }
    }
    if r.offset + 4 != buf.len() {
        return Err(r.fail("trailing bytes after checksum position"));
    }
    let stored_crc = r.u32()?;
    let actual_crc = crc32fast::hash(&buf[..buf.len() - 4]);
    if stored_crc != actual_crc {
        return Err(Error::Corruption(format!(
            "{}: CRC32 mismatch (stored {stored_crc:#010x}, computed {actual_crc:#010x})",
            path.display()
        )));
    }
    if mask_entries.is_empty() {
        return Err(Error::Format {
            offset: 12,
            reason: "checkpoint contains no mask tensors".into(),
        });
    }
    Ok(Checkpoint {
        params: ParamSet::new(param_entries)?,
        mask: Mask::new(mask_entries)?,
        meta,
    })
}

/// Names, config echo, and dataset identity for one saved IMP run.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub created_unix: u64,
    pub config: ImpConfig,
    pub data: DataRef,
    pub rewind_file: String,
    pub checkpoint_files: Vec<String>,
}

pub fn save_run(run: &ImpRun, dir: &Path, data: &DataRef) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let mut checkpoint_files = Vec::new();
    for ckpt in &run.checkpoints {
        let file = format!("ckpt_{:03}.lpck", ckpt.meta.imp_iteration);
        save_checkpoint(ckpt, &dir.join(&file))?;
        checkpoint_files.push(file);
    }
    let rewind_ckpt = Checkpoint {
        params: run.rewind_params.clone(),
        mask: Mask::full_for(&run.rewind_params)?,
        meta: CheckpointMeta {
            imp_iteration: 0,
            density: 1.0,
            rewind_epoch: run.config.train.rewind_epoch,
            prune_fraction: run.config.prune_fraction,
            layer_sizes: run.config.model.layer_sizes.clone(),
            init_seed: run.config.model.init_seed,
            shuffle_seed: run.config.train.shuffle_seed,
        },
    };
    save_checkpoint(&rewind_ckpt, &dir.join(REWIND_FILE))?;

    let manifest = RunManifest {
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: run.config.clone(),
        data: data.clone(),
        rewind_file: REWIND_FILE.to_string(),
        checkpoint_files,
    };
    write_manifest(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn write_manifest(m: &RunManifest, path: &Path) -> Result<()> {
    let mut lines = Vec::new();
    lines.push(format!("schema_version={SCHEMA_VERSION}"));
    lines.push(format!("created_unix={}", m.created_unix));
    lines.push(format!("data_spec={}", m.data.spec));
    if let Some(limit) = m.data.limit {
        lines.push(format!("limit={limit}"));
    }
    lines.push(format!("val_fraction={}", m.data.val_fraction));
    lines.push(format!("split_seed={}", m.data.split_seed));
    lines.push(format!("dataset_sha256={}", m.data.dataset_sha256));
    for (k, v) in imp_config_to_kv(&m.config) {
        lines.push(format!("{k}={v}"));
    }
    lines.push(format!("rewind_file={}", m.rewind_file));
    for (t, file) in m.checkpoint_files.iter().enumerate() {
        lines.push(format!("checkpoint_{t}={file}"));
    }
    std::fs::write(path, lines.join("\n") + "\n")?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)?;
    let mut created_unix = 0u64;
    let mut data = DataRef {
        spec: String::new(),
        limit: None,
        val_fraction: 0.0,
        split_seed: 0,
        dataset_sha256: String::new(),
    };
    let mut rewind_file = None;
    let mut checkpoints: Vec<(usize, String)> = Vec::new();
    let mut config_kv: Vec<(String, String)> = Vec::new();
    let bad = |reason: String| Error::Config(format!("{}: {reason}", path.display()));
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {line:?} is not key=value")))?;
        match key {
            "schema_version" => {
                let v: u32 = value
                    .parse()
                    .map_err(|_| bad(format!("bad schema_version {value:?}")))?;
                if v != SCHEMA_VERSION {
                    return Err(bad(format!("unsupported schema_version {v}")));
                }
            }
            "created_unix" => {
                created_unix = value
                    .parse()
                    .map_err(|_| bad(format!("bad created_unix {value:?}")))?;
            }
            "data_spec" => data.spec = value.to_string(),
            "limit" => {
                data.limit = Some(
                    value
                        .parse()
                        .map_err(|_| bad(format!("bad limit {value:?}")))?,
                );
            }
            "val_fraction" => {
                data.val_fraction = value
                    .parse()
                    .map_err(|_| bad(format!("bad val_fraction {value:?}")))?;
            }
            "split_seed" => {
                data.split_seed = value
                    .parse()
                    .map_err(|_| bad(format!("bad split_seed {value:?}")))?;
            }
            "dataset_sha256" => data.dataset_sha256 = value.to_string(),
            "rewind_file" => rewind_file = Some(value.to_string()),
            _ if key.starts_with("checkpoint_") => {
                let t: usize = key["checkpoint_".len()..]
                    .parse()
                    .map_err(|_| bad(format!("bad checkpoint key {key:?}")))?;
                checkpoints.push((t, value.to_string()));
            }
            _ => config_kv.push((key.to_string(), value.to_string())),
        }
    }
    let config = imp_config_from_kv(&config_kv)?;
    checkpoints.sort_by_key(|&(t, _)| t);
    for (i, &(t, _)) in checkpoints.iter().enumerate() {
        if t != i {
            return Err(bad(format!("checkpoint indices not contiguous at {t}")));
        }
    }
    let manifest = RunManifest {
        created_unix,
        config,
        data,
        rewind_file: rewind_file.ok_or_else(|| bad("missing rewind_file".into()))?,
        checkpoint_files: checkpoints.into_iter().map(|(_, f)| f).collect(),
    };
    for file in manifest
        .checkpoint_files
        .iter()
        .chain(std::iter::once(&manifest.rewind_file))
    {
        if !dir.join(file).exists() {
            return Err(bad(format!("listed file {file:?} does not exist")));
        }
    }
    Ok(manifest)
}

/// Loads a whole run back into memory, validating every checkpoint.
pub fn load_run(dir: &Path) -> Result<(ImpRun, RunManifest)> {
    let manifest = load_manifest(dir)?;
    let mut checkpoints = Vec::with_capacity(manifest.checkpoint_files.len());
    for (t, file) in manifest.checkpoint_files.iter().enumerate() {
        let ckpt = load_checkpoint(&dir.join(file))?;
        ckpt.validate()?;
        if ckpt.meta.imp_iteration != t {
            return Err(Error::Config(format!(
                "checkpoint {file:?} claims iteration {} but is listed as {t}",
                ckpt.meta.imp_iteration
            )));
        }
        checkpoints.push(ckpt);
    }
    let rewind = load_checkpoint(&dir.join(&manifest.rewind_file))?;
    let run = ImpRun {
        checkpoints,
        rewind_params: rewind.params,
        config: manifest.config.clone(),
    };
    Ok((run, manifest))
}

/// Checkpoint file path for iteration `t` under a run directory.
pub fn checkpoint_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("ckpt_{t:03}.lpck"))
}
