//! Binary checkpoint format with an FNV-1a integrity footer and a JSON sidecar.
//!
//! ```text
//! "SISA" | u32 version | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | rank x u32 dims | f32 payload
//! u64 FNV-1a digest of every preceding byte
//! ```
//!
//! All integers are little-endian. Parameters come first, then the Adam
//! first moments (`adam.m.*`) and second moments (`adam.v.*`). Everything that
//! is not a tensor (cursor, RNG position, architecture, optimizer step) lives
//! in the sidecar next to the `.ckpt` file.

use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Architecture, ModelParameters, NamedTensor, OptimizerState, Tensor};
use crate::rng::RngState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SISA";
pub const CHECKPOINT_VERSION: u32 = 1;

const FIRST_PREFIX: &str = "adam.m.";
const SECOND_PREFIX: &str = "adam.v.";

/// Position in the training schedule a checkpoint was taken at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainCursor {
    pub shard_id: usize,
    pub slice_index: usize,
    /// Epoch whose parameters were kept (the best by validation loss).
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParameters<f32>,
    pub optimizer: OptimizerState<f32>,
    pub cursor: TrainCursor,
    pub rng: RngState,
    pub digest: u64,
}

/// Sidecar JSON written next to every checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub shard_id: usize,
    pub slice_index: usize,
    pub epoch: usize,
    pub seed: u64,
    pub rng_counter: u64,
    pub output_classes: Vec<u32>,
    pub architecture: Architecture,
    pub optimizer: AdamConfig,
    pub optimizer_step: u64,
    /// Hex FNV-1a digest of the binary file.
    pub digest: String,
    pub created_unix_ms: u128,
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.dims().len() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Encode parameters and moments; the returned buffer includes the footer.
pub fn encode(params: &ModelParameters<f32>, optimizer: &OptimizerState<f32>) -> Vec<u8> {
    let tensors = params.tensors();
    let bytes_hint = 12 + 8 + 4 * (params.param_count() + optimizer.moment_count()) + 64 * tensors.len() * 3;
    let mut out = Vec::with_capacity(bytes_hint);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&((tensors.len() * 3) as u32).to_le_bytes());
    for t in tensors {
        push_tensor(&mut out, &t.name, &t.tensor);
    }
    for (prefix, moments) in [(FIRST_PREFIX, &optimizer.first), (SECOND_PREFIX, &optimizer.second)] {
        for (t, m) in tensors.iter().zip(moments) {
            push_tensor(&mut out, &format!("{prefix}{}", t.name), m);
        }
    }
    let digest = fnv(&out);
    out.extend_from_slice(&digest.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Integrity(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Verify the footer and decode every tensor. Returns the tensors and digest.
pub fn decode(bytes: &[u8]) -> Result<(Vec<NamedTensor<f32>>, u64)> {
    if bytes.len() < 20 {
        return Err(Error::Integrity(format!("checkpoint of {} bytes is truncated", bytes.len())));
    }
    let (body, footer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(footer.try_into().unwrap());
    let actual = fnv(body);
    if stored != actual {
        return Err(Error::Integrity(format!(
            "digest mismatch: stored {stored:016x}, computed {actual:016x}"
        )));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Integrity("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Integrity("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor {
            name,
            tensor: Tensor::from_vec(dims, data)?,
        });
    }
    if r.pos != body.len() {
        return Err(Error::Integrity("trailing bytes after last tensor".into()));
    }
    Ok((tensors, actual))
}

impl Checkpoint {
    pub fn new(params: ModelParameters<f32>, optimizer: OptimizerState<f32>, cursor: TrainCursor, rng: RngState) -> Self {
        let bytes = encode(&params, &optimizer);
        let digest = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        Self {
            params,
            optimizer,
            cursor,
            rng,
            digest,
        }
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            shard_id: self.cursor.shard_id,
            slice_index: self.cursor.slice_index,
            epoch: self.cursor.epoch,
            seed: self.rng.seed,
            rng_counter: self.rng.counter,
            output_classes: self.params.output_classes().to_vec(),
            architecture: self.params.arch().clone(),
            optimizer: self.optimizer.config,
            optimizer_step: self.optimizer.step,
            digest: format!("{:016x}", self.digest),
            created_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }

    /// Rebuild from the binary file contents and its sidecar.
    pub fn from_parts(bytes: &[u8], meta: &CheckpointMeta) -> Result<Self> {
        let (mut tensors, digest) = decode(bytes)?;
        if format!("{digest:016x}") != meta.digest {
            return Err(Error::Integrity(format!(
                "sidecar digest {} does not match checkpoint {digest:016x}",
                meta.digest
            )));
        }
        let n = meta.architecture.param_specs(meta.output_classes.len()).len();
        if tensors.len() != 3 * n {
            return Err(Error::Integrity(format!("expected {} tensors, found {}", 3 * n, tensors.len())));
        }
        let second: Vec<_> = tensors.split_off(2 * n);
        let first: Vec<_> = tensors.split_off(n);
        let strip = |ts: Vec<NamedTensor<f32>>, prefix: &str| -> Result<Vec<Tensor<f32>>> {
            ts.into_iter()
                .map(|t| {
                    if t.name.starts_with(prefix) {
                        Ok(t.tensor)
                    } else {
                        Err(Error::Integrity(format!("unexpected tensor {}", t.name)))
                    }
                })
                .collect()
        };
        let params = ModelParameters::from_tensors(meta.architecture.clone(), meta.output_classes.clone(), tensors)
            .map_err(|e| Error::Integrity(e.to_string()))?;
        let optimizer = OptimizerState {
            config: meta.optimizer,
            step: meta.optimizer_step,
            first: strip(first, FIRST_PREFIX)?,
            second: strip(second, SECOND_PREFIX)?,
        };
        Ok(Self {
            params,
            optimizer,
            cursor: TrainCursor {
                shard_id: meta.shard_id,
                slice_index: meta.slice_index,
                epoch: meta.epoch,
            },
            rng: RngState {
                seed: meta.seed,
                counter: meta.rng_counter,
            },
            digest,
        })
    }
}

/// Path of the JSON sidecar belonging to a checkpoint file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write `bytes` to a temporary sibling and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming onto {}", path.display()), e))
}

/// Write the checkpoint and its sidecar; returns the digest.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let bytes = encode(&ckpt.params, &ckpt.optimizer);
    write_atomic(path, &bytes)?;
    let meta = serde_json::to_vec_pretty(&ckpt.meta()).map_err(|e| Error::json("checkpoint sidecar", e))?;
    write_atomic(&sidecar_path(path), &meta)?;
    Ok(ckpt.digest)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let side = sidecar_path(path);
    let meta_text = fs::read(&side).map_err(|e| Error::io(format!("reading {}", side.display()), e))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&meta_text).map_err(|e| Error::json(format!("parsing {}", side.display()), e))?;
    Checkpoint::from_parts(&bytes, &meta)
}
