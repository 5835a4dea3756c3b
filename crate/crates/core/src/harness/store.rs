//! On-disk formats: binary embedding banks, CSV pair tables, binary
//! checkpoints, and canonical JSON.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptors::{compose_descriptor, DescriptorNormalizer};
use crate::error::{Error, Result};
use crate::evaluator::{ContextVector, Dims, EvaluatorParams, LrSchedule, OptimizerState};
use crate::meta::{EpochLog, EvalPair, MetaConfig, MetaState};
use crate::numerics::Matrix;

pub const BANK_MAGIC: &[u8; 4] = b"MEVB";
pub const BANK_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MEVC";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Pretty JSON with a trailing newline. Struct fields serialize in
/// declaration order and maps are `BTreeMap`s, so output is canonical.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_canonical_json(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_input(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Reads a file, reporting absence as a missing-input error.
pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingInput(path.to_path_buf()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Creates `dir` if needed. A nonempty existing directory is refused unless
/// `force` is set.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir)?.next().is_some();
        if nonempty && !force {
            return Err(Error::Exists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

// ---- banks ----

pub fn write_bank(mut w: impl Write, samples: &Matrix) -> Result<()> {
    w.write_all(BANK_MAGIC)?;
    w.write_all(&BANK_VERSION.to_le_bytes())?;
    w.write_all(&(samples.rows() as u64).to_le_bytes())?;
    w.write_all(&(samples.cols() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(samples.as_slice().len() * 4);
    for v in samples.as_slice() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_bank(mut r: impl Read) -> Result<Matrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor::new(&bytes);
    if cur.take(4)? != BANK_MAGIC {
        return Err(Error::Format("not an embedding bank (bad magic)".into()));
    }
    let version = cur.u16()?;
    if version != BANK_VERSION {
        return Err(Error::Version {
            expected: BANK_VERSION.into(),
            found: version.into(),
        });
    }
    let n = cur.u64()? as usize;
    let d = cur.u64()? as usize;
    let count = n
        .checked_mul(d)
        .ok_or_else(|| Error::Format("bank shape overflows".into()))?;
    let data = cur.f32s(count)?;
    if !cur.is_done() {
        return Err(Error::Format("trailing bytes after bank data".into()));
    }
    Matrix::new(n, d, data)
}

pub fn save_bank(path: &Path, samples: &Matrix) -> Result<()> {
    let mut buf = Vec::new();
    write_bank(&mut buf, samples)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_bank(path: &Path) -> Result<Matrix> {
    read_bank(read_input(path)?.as_slice())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "wanted {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format("length overflows".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

// ---- pair tables ----

pub const PAIR_HEADER: [&str; 9] = [
    "model_id",
    "workload_id",
    "source_id",
    "target_id",
    "sd_f",
    "sd_m",
    "sd_sw",
    "seed",
    "true_metric",
];

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    model_id: String,
    workload_id: String,
    source_id: String,
    target_id: String,
    sd_f: f64,
    sd_m: f64,
    sd_sw: f64,
    seed: u64,
    true_metric: f64,
}

pub fn write_pairs(w: impl Write, pairs: &[EvalPair]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in pairs {
        out.serialize(PairRow {
            model_id: p.model_id.clone(),
            workload_id: p.workload_id.clone(),
            source_id: p.descriptor.source_id.clone(),
            target_id: p.descriptor.target_id.clone(),
            sd_f: p.descriptor.sd_f,
            sd_m: p.descriptor.sd_m,
            sd_sw: p.descriptor.sd_sw,
            seed: p.descriptor.seed,
            true_metric: p.true_metric,
        })?;
    }
    if pairs.is_empty() {
        out.write_record(PAIR_HEADER)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pairs(r: impl Read) -> Result<Vec<EvalPair>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != PAIR_HEADER {
        return Err(Error::Format(format!(
            "pair table header must be `{}`",
            PAIR_HEADER.join(",")
        )));
    }
    rdr.deserialize::<PairRow>()
        .map(|row| {
            let r = row?;
            let sd = compose_descriptor(r.sd_f, r.sd_m, r.sd_sw, r.source_id, r.target_id, r.seed)?;
            EvalPair::new(sd, r.true_metric, r.model_id, r.workload_id)
        })
        .collect()
}

pub fn save_pairs(path: &Path, pairs: &[EvalPair]) -> Result<()> {
    let mut buf = Vec::new();
    write_pairs(&mut buf, pairs)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_pairs(path: &Path) -> Result<Vec<EvalPair>> {
    read_pairs(read_input(path)?.as_slice())
}

/// Order-sensitive digest of the exact (descriptor, truth) values.
pub fn pairs_checksum(pairs: &[EvalPair]) -> String {
    let mut h = Sha256::new();
    for p in pairs {
        h.update(p.model_id.as_bytes());
        h.update([0]);
        h.update(p.workload_id.as_bytes());
        h.update([0]);
        for v in p.descriptor.components() {
            h.update(v.to_le_bytes());
        }
        h.update(p.true_metric.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

// ---- checkpoints ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    /// Offset and length in 32-bit floats from the start of the blob.
    pub offset: u64,
    pub len: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerMeta {
    step: u64,
    base_lr: f64,
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    total_steps: u64,
    schedule: LrSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u16,
    pub dims: Dims,
    pub param_count: u64,
    pub context_ids: Vec<String>,
    pub seed: u64,
    pub normalizer_fitted_on: usize,
    optimizer: OptimizerMeta,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub config: MetaConfig,
    pub blobs: Vec<BlobEntry>,
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Layout: magic, u16 version, u32 manifest length, manifest JSON, the
/// float blob, and a trailing SHA-256 over everything before it.
pub fn save_checkpoint(state: &MetaState) -> Result<Vec<u8>> {
    let mut sections: Vec<(String, Vec<f64>)> = vec![("params".into(), state.params.data.clone())];
    for (id, ctx) in &state.contexts {
        sections.push((format!("context:{id}"), ctx.values.clone()));
    }
    sections.push(("normalizer.means".into(), state.normalizer.means.to_vec()));
    sections.push(("normalizer.stds".into(), state.normalizer.stds.to_vec()));
    sections.push(("optimizer.m".into(), state.opt_state.m.clone()));
    sections.push(("optimizer.v".into(), state.opt_state.v.clone()));

    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(sections.len());
    let mut offset = 0u64;
    for (name, values) in &sections {
        let bytes = f32_bytes(values);
        entries.push(BlobEntry {
            name: name.clone(),
            offset,
            len: values.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        offset += values.len() as u64;
        blob.extend_from_slice(&bytes);
    }
    let o = &state.opt_state;
    let manifest = CheckpointManifest {
        schema_version: CHECKPOINT_VERSION,
        dims: state.params.dims.clone(),
        param_count: state.params.len() as u64,
        context_ids: state.contexts.keys().cloned().collect(),
        seed: state.config.seed,
        normalizer_fitted_on: state.normalizer.fitted_on,
        optimizer: OptimizerMeta {
            step: o.step,
            base_lr: o.base_lr,
            beta1: o.beta1,
            beta2: o.beta2,
            weight_decay: o.weight_decay,
            total_steps: o.total_steps,
            schedule: o.schedule,
        },
        best_epoch: state.best_epoch,
        log: state.log.clone(),
        config: state.config.clone(),
        blobs: entries,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let manifest_len = u32::try_from(manifest_bytes.len())
        .map_err(|_| Error::Format("manifest too large".into()))?;

    let mut out = Vec::with_capacity(10 + manifest_bytes.len() + blob.len() + 32);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&manifest_len.to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    out.extend_from_slice(&blob);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn read_checkpoint_manifest(bytes: &[u8]) -> Result<(CheckpointManifest, usize)> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION.into(),
            found: version.into(),
        });
    }
    let len = cur.u32()? as usize;
    let manifest: CheckpointManifest = serde_json::from_slice(cur.take(len)?)
        .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    if manifest.schema_version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION.into(),
            found: manifest.schema_version.into(),
        });
    }
    Ok((manifest, cur.pos))
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<MetaState> {
    let (manifest, blob_start) = read_checkpoint_manifest(bytes)?;
    let total: u64 = manifest.blobs.iter().map(|b| b.len).sum();
    let blob_len = usize::try_from(total * 4).map_err(|_| Error::Format("blob too large".into()))?;
    let expected_len = blob_start + blob_len + 32;
    if bytes.len() < expected_len {
        return Err(Error::Truncated(format!(
            "checkpoint has {} bytes, manifest implies {expected_len}",
            bytes.len()
        )));
    }
    if bytes.len() > expected_len {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let blob = &bytes[blob_start..blob_start + blob_len];

    let mut sections: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut expected_offset = 0u64;
    for b in &manifest.blobs {
        if b.offset != expected_offset {
            return Err(Error::Format(format!("blob `{}` is not contiguous", b.name)));
        }
        expected_offset += b.len;
        let raw = &blob[(b.offset * 4) as usize..((b.offset + b.len) * 4) as usize];
        if sha256_hex(raw) != b.sha256 {
            return Err(Error::Checksum(b.name.clone()));
        }
        sections.insert(b.name.as_str(), Cursor::new(raw).f32s(b.len as usize)?);
    }
    let trailer = &bytes[expected_len - 32..];
    if Sha256::digest(&bytes[..expected_len - 32]).as_slice() != trailer {
        return Err(Error::Checksum("manifest".into()));
    }

    let mut take = |name: &str| -> Result<Vec<f64>> {
        sections
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks blob `{name}`")))
    };
    let params = EvaluatorParams::from_vec(manifest.dims.clone(), take("params")?)?;
    let mut contexts = BTreeMap::new();
    for id in &manifest.context_ids {
        let values = take(&format!("context:{id}"))?;
        if values.len() != manifest.dims.ctx_dim {
            return Err(Error::DimensionMismatch {
                what: "checkpoint context",
                expected: manifest.dims.ctx_dim,
                got: values.len(),
            });
        }
        contexts.insert(
            id.clone(),
            ContextVector {
                model_id: id.clone(),
                values,
            },
        );
    }
    let three = |v: Vec<f64>| -> Result<[f64; 3]> {
        v.try_into()
            .map_err(|_| Error::Format("normalizer blob must hold 3 values".into()))
    };
    let normalizer = DescriptorNormalizer {
        means: three(take("normalizer.means")?)?,
        stds: three(take("normalizer.stds")?)?,
        fitted_on: manifest.normalizer_fitted_on,
    };
    let o = &manifest.optimizer;
    let m = take("optimizer.m")?;
    let v = take("optimizer.v")?;
    if m.len() != params.len() || v.len() != params.len() {
        return Err(Error::Format("optimizer moments do not match parameters".into()));
    }
    let opt_state = OptimizerState {
        m,
        v,
        step: o.step,
        base_lr: o.base_lr,
        beta1: o.beta1,
        beta2: o.beta2,
        weight_decay: o.weight_decay,
        total_steps: o.total_steps,
        schedule: o.schedule,
    };
    Ok(MetaState {
        params,
        contexts,
        normalizer,
        opt_state,
        config: manifest.config,
        log: manifest.log,
        best_epoch: manifest.best_epoch,
    })
}

pub fn write_checkpoint_file(path: &Path, state: &MetaState) -> Result<()> {
    fs::write(path, save_checkpoint(state)?)?;
    Ok(())
}

pub fn read_checkpoint_file(path: &Path) -> Result<MetaState> {
    load_checkpoint(&read_input(path)?)
}

/// A context saved on its own, as produced by adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextArtifact {
    pub model_id: String,
    pub seed: u64,
    pub steps: usize,
    pub alpha: f64,
    pub trace: Vec<f64>,
    pub values: Vec<f64>,
}
