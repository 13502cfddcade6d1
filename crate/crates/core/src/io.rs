//! File formats, configuration and loss-trace I/O.
//!
//! All binary formats are little-endian with a 4-byte magic and a `u32`
//! version, and real numbers stored as IEEE-754 binary64:
//!
//! | magic  | header after version              | payload                                   |
//! |--------|-----------------------------------|-------------------------------------------|
//! | `CFMB` | `N, m1, m2: u32`                  | `N` row-major matrices, optional metadata |
//! | `CFMK` | `N, m1, m2: u32`                  | `N * m1 * m2` bytes, `1` = observed        |
//! | `CFSS` | `m1, m2, R: u32`                  | `U` then `V`, row-major                    |
//! | `CFNN` | `d: u32`, `L: u32`, `L` sizes     | mean, std (`d` each), `u64` count, params |
//!
//! The batch metadata block is a `u32` byte length followed by UTF-8
//! `key=value\n` lines. Writes go to a temporary file that is then renamed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::batch::{Mask, MatrixBatch, Metadata};
use crate::error::{shape_err, Error, Result};
use crate::flow::{Dense, FlowConfig, VelocityNet};
use crate::linalg::Mat;
use crate::stage1::{LossRecord, Stage1Config};
use crate::stiefel::{StiefelPair, StiefelPoint};
use crate::synth::Case;

pub const VERSION: u32 = 1;
pub const BATCH_MAGIC: [u8; 4] = *b"CFMB";
pub const MASK_MAGIC: [u8; 4] = *b"CFMK";
pub const SUBSPACE_MAGIC: [u8; 4] = *b"CFSS";
pub const FLOW_MAGIC: [u8; 4] = *b"CFNN";

/// Loaded factors looser than this trigger a warning.
const ORTHO_WARN_TOL: f64 = 1e-6;

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: [u8; 4]) -> Self {
        let mut w = Writer(magic.to_vec());
        w.u32(VERSION);
        w
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn dim(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| shape_err(format!("dimension {v} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.0.reserve(vs.len() * 8);
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: [u8; 4]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let found: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if found != magic {
            return Err(Error::BadMagic {
                expected: magic,
                found,
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        Ok(r)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::TruncatedPayload {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn dim(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    /// Checks that `count` items of `width` bytes are present before allocating.
    fn expect_items(&self, count: usize, width: usize) -> Result<usize> {
        let needed = count
            .checked_mul(width)
            .ok_or_else(|| shape_err("payload size overflows"))?;
        if self.remaining() < needed {
            return Err(Error::TruncatedPayload {
                expected: self.pos + needed,
                found: self.bytes.len(),
            });
        }
        Ok(needed)
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let n = self.expect_items(count, 8)?;
        Ok(self
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::InvalidData(format!(
                "{} trailing bytes",
                self.remaining()
            )));
        }
        Ok(())
    }
}

fn encode_metadata(meta: &Metadata) -> Result<Vec<u8>> {
    let mut text = String::new();
    for (k, v) in meta {
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::InvalidData(format!(
                "metadata entry {k:?}={v:?} cannot be stored"
            )));
        }
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    Ok(text.into_bytes())
}

fn decode_metadata(bytes: &[u8]) -> Result<Metadata> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::InvalidData("metadata is not UTF-8".into()))?;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(Error::InvalidData(
            "metadata must end with a newline".into(),
        ));
    }
    text.lines()
        .map(|line| {
            line.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::InvalidData(format!("metadata line {line:?} lacks '='")))
        })
        .collect()
}

pub fn encode_batch(batch: &MatrixBatch) -> Result<Vec<u8>> {
    let (m1, m2) = batch.shape();
    let mut w = Writer::new(BATCH_MAGIC);
    w.dim(batch.len())?;
    w.dim(m1)?;
    w.dim(m2)?;
    for m in batch.matrices() {
        w.f64s(m.as_slice());
    }
    if let Some(meta) = &batch.metadata {
        let block = encode_metadata(meta)?;
        w.dim(block.len())?;
        w.0.extend_from_slice(&block);
    }
    Ok(w.0)
}

pub fn decode_batch(bytes: &[u8]) -> Result<MatrixBatch> {
    let mut r = Reader::new(bytes, BATCH_MAGIC)?;
    let (n, m1, m2) = (r.dim()?, r.dim()?, r.dim()?);
    let size = m1
        .checked_mul(m2)
        .ok_or_else(|| shape_err("matrix size overflows"))?;
    r.expect_items(
        n,
        size.checked_mul(8)
            .ok_or_else(|| shape_err("matrix size overflows"))?,
    )?;
    let mats = (0..n)
        .map(|_| Mat::from_vec(m1, m2, r.f64s(size)?))
        .collect::<Result<Vec<_>>>()?;
    let metadata = if r.remaining() > 0 {
        let len = r.dim()?;
        let meta = decode_metadata(r.take(len)?)?;
        r.finish()?;
        Some(meta)
    } else {
        None
    };
    let mut batch = MatrixBatch::new(m1, m2, mats)?;
    batch.metadata = metadata;
    Ok(batch)
}

pub fn encode_masks(masks: &[Mask], shape: (usize, usize)) -> Result<Vec<u8>> {
    let mut w = Writer::new(MASK_MAGIC);
    w.dim(masks.len())?;
    w.dim(shape.0)?;
    w.dim(shape.1)?;
    for k in masks {
        if k.shape() != shape {
            return Err(shape_err(format!(
                "mask {:?} in a {:?} mask file",
                k.shape(),
                shape
            )));
        }
        w.0.extend(k.as_slice().iter().map(|&o| o as u8));
    }
    Ok(w.0)
}

pub fn decode_masks(bytes: &[u8]) -> Result<Vec<Mask>> {
    let mut r = Reader::new(bytes, MASK_MAGIC)?;
    let (n, m1, m2) = (r.dim()?, r.dim()?, r.dim()?);
    let size = m1
        .checked_mul(m2)
        .ok_or_else(|| shape_err("mask size overflows"))?;
    r.expect_items(n, size)?;
    let masks = (0..n)
        .map(|i| {
            let raw = r.take(size)?;
            let observed = raw
                .iter()
                .enumerate()
                .map(|(j, &b)| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(shape_err(format!(
                        "mask {i} entry {j} has value {other}, expected 0 or 1"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            Mask::from_vec(m1, m2, observed)
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(masks)
}

pub fn encode_subspaces(pair: &StiefelPair) -> Result<Vec<u8>> {
    let (m1, m2) = pair.matrix_shape();
    let mut w = Writer::new(SUBSPACE_MAGIC);
    w.dim(m1)?;
    w.dim(m2)?;
    w.dim(pair.rank())?;
    w.f64s(pair.u.mat().as_slice());
    w.f64s(pair.v.mat().as_slice());
    Ok(w.0)
}

pub fn decode_subspaces(bytes: &[u8]) -> Result<StiefelPair> {
    let mut r = Reader::new(bytes, SUBSPACE_MAGIC)?;
    let (m1, m2, rank) = (r.dim()?, r.dim()?, r.dim()?);
    let total = m1
        .checked_add(m2)
        .and_then(|s| s.checked_mul(rank))
        .ok_or_else(|| shape_err("size overflows"))?;
    r.expect_items(total, 8)?;
    let u = Mat::from_vec(m1, rank, r.f64s(m1 * rank)?)?;
    let v = Mat::from_vec(m2, rank, r.f64s(m2 * rank)?)?;
    r.finish()?;
    if !u.is_finite() || !v.is_finite() {
        return Err(Error::NonFinite("subspace factors".into()));
    }
    for (name, w) in [("U", &u), ("V", &v)] {
        let err = w.orthonormality_error();
        if err > ORTHO_WARN_TOL {
            log::warn!("loaded {name} deviates from orthonormality by {err:e}");
        }
    }
    StiefelPair::new(
        StiefelPoint::with_tolerance(u, f64::INFINITY)?,
        StiefelPoint::with_tolerance(v, f64::INFINITY)?,
    )
}

pub fn encode_flow(net: &VelocityNet) -> Result<Vec<u8>> {
    let mut w = Writer::new(FLOW_MAGIC);
    w.dim(net.dim())?;
    let sizes = net.layer_sizes();
    w.dim(sizes.len())?;
    for s in &sizes {
        w.dim(*s)?;
    }
    w.f64s(net.mean());
    w.f64s(net.std());
    let params = net.params();
    w.u64(params.len() as u64);
    w.f64s(&params);
    Ok(w.0)
}

pub fn decode_flow(bytes: &[u8]) -> Result<VelocityNet> {
    let mut r = Reader::new(bytes, FLOW_MAGIC)?;
    let d = r.dim()?;
    let count = r.dim()?;
    r.expect_items(count, 4)?;
    let sizes = (0..count).map(|_| r.dim()).collect::<Result<Vec<_>>>()?;
    let mean = r.f64s(d)?;
    let std = r.f64s(d)?;
    let active = std.iter().filter(|&&s| s != 0.0).count();
    if sizes.len() < 2
        || sizes[0] < active
        || (sizes[0] - active) % 2 != 0
        || *sizes.last().expect("len >= 2") != active
    {
        return Err(shape_err(format!(
            "layer sizes {sizes:?} do not fit {active} active coordinates"
        )));
    }
    let n_params = r.u64()? as usize;
    let expected: usize = sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
    if n_params != expected {
        return Err(shape_err(format!(
            "{n_params} parameters stored, architecture needs {expected}"
        )));
    }
    let params = r.f64s(n_params)?;
    r.finish()?;
    let layers = sizes
        .windows(2)
        .map(|p| Dense {
            weight: Mat::zeros(p[0], p[1]),
            bias: vec![0.0; p[1]],
        })
        .collect();
    let mut net = VelocityNet::from_layers(d, sizes[0] - active, layers, mean, std)?;
    net.set_params(&params)?;
    if !params.iter().all(|p| p.is_finite()) {
        return Err(Error::NonFinite("flow parameters".into()));
    }
    Ok(net)
}

pub fn write_batch(path: &Path, batch: &MatrixBatch) -> Result<()> {
    write_atomic(path, &encode_batch(batch)?)
}

pub fn read_batch(path: &Path) -> Result<MatrixBatch> {
    decode_batch(&fs::read(path)?)
}

pub fn write_masks(path: &Path, masks: &[Mask], shape: (usize, usize)) -> Result<()> {
    write_atomic(path, &encode_masks(masks, shape)?)
}

pub fn read_masks(path: &Path) -> Result<Vec<Mask>> {
    decode_masks(&fs::read(path)?)
}

/// Reads a batch and, if given, its companion mask file.
pub fn read_batch_with_masks(path: &Path, mask_path: Option<&Path>) -> Result<MatrixBatch> {
    let batch = read_batch(path)?;
    match mask_path {
        Some(p) => batch.with_masks(read_masks(p)?),
        None => Ok(batch),
    }
}

pub fn write_subspaces(path: &Path, pair: &StiefelPair) -> Result<()> {
    write_atomic(path, &encode_subspaces(pair)?)
}

pub fn read_subspaces(path: &Path) -> Result<StiefelPair> {
    decode_subspaces(&fs::read(path)?)
}

pub fn write_flow(path: &Path, net: &VelocityNet) -> Result<()> {
    write_atomic(path, &encode_flow(net)?)
}

pub fn read_flow(path: &Path) -> Result<VelocityNet> {
    decode_flow(&fs::read(path)?)
}

/// Loss trace as CSV with header `step,loss`.
pub fn write_trace(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut text = String::from("step,loss\n");
    for r in trace {
        text.push_str(&format!("{},{}\n", r.step, r.loss));
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_trace(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("step,loss") {
        return Err(Error::InvalidData(
            "loss trace must start with 'step,loss'".into(),
        ));
    }
    lines
        .map(|line| {
            let bad = || Error::InvalidData(format!("bad trace line {line:?}"));
            let (s, l) = line.split_once(',').ok_or_else(bad)?;
            Ok(LossRecord {
                step: s.parse().map_err(|_| bad())?,
                loss: l.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub case: Case,
    pub m1: usize,
    pub m2: usize,
    pub rank: usize,
    pub n: usize,
    /// Extra samples generated after the training set and held out as the
    /// evaluation reference.
    pub holdout: usize,
    pub p_miss: f64,
    pub seed: u64,
    pub patch: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            case: Case::Blobs,
            m1: 200,
            m2: 200,
            rank: 24,
            n: 1000,
            holdout: 500,
            p_miss: 0.0,
            seed: 0,
            patch: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_generate: usize,
    pub repeats: usize,
    pub sample_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_generate: 500,
            repeats: 3,
            sample_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// NIW prior overrides; unset values use `kappa0 = 1`, `nu0 = d + 2`.
    pub kappa0: Option<f64>,
    pub nu0: Option<f64>,
    /// PCA-Flow dimension cap; defaults to `R^2`.
    pub pca_dim_cap: Option<usize>,
}

/// The full experiment configuration. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataConfig,
    pub stage1: Stage1Config,
    pub flow: FlowConfig,
    pub eval: EvalConfig,
    pub baseline: BaselineConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Config::from_json(&fs::read_to_string(path)?)
    }
}
