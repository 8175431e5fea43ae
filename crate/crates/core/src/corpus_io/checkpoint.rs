//! Binary checkpoint container.
//!
//! ```text
//! magic    8 bytes  "TRIADGND"
//! version  u32 LE
//! length   u64 LE   payload byte count
//! payload
//! sha256   32 bytes over magic..payload
//! ```
//!
//! The payload holds the model config as JSON, then named tensors: every
//! trainable parameter and the frozen word table, with its word list.
//! Floats are stored as raw little-endian bits, so a round trip is exact.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::engine::Tensor;
use crate::model::{Mlp, ModelConfig, ModelError, ModelParams, PARAM_NAMES};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TRIADGND";
const HEADER: usize = 8 + 4 + 8;
const DIGEST: usize = 32;
const WORD_VECTORS: &str = "word_vectors";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint parameters rejected: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_bytes(out, name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes parameters to checkpoint bytes.
pub fn write_checkpoint(params: &ModelParams) -> Result<Vec<u8>, CheckpointError> {
    if let Some((name, _)) = PARAM_NAMES.iter().zip(params.tensors()).find(|(_, t)| !t.is_finite()) {
        return Err(CheckpointError::Corrupt(format!("refusing to save non-finite parameter {name}")));
    }
    let mut payload = Vec::new();
    let config = serde_json::to_vec(&params.config).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    put_bytes(&mut payload, &config);
    payload.extend_from_slice(&(params.words().len() as u64).to_le_bytes());
    for w in params.words() {
        put_bytes(&mut payload, w.as_bytes());
    }
    let tensors = params.tensors();
    payload.extend_from_slice(&((tensors.len() + 1) as u64).to_le_bytes());
    for (name, t) in PARAM_NAMES.iter().zip(tensors) {
        put_tensor(&mut payload, name, t);
    }
    put_tensor(&mut payload, WORD_VECTORS, params.word_vectors());

    let mut out = Vec::with_capacity(HEADER + payload.len() + DIGEST);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(CheckpointError::Corrupt(format!("field at byte {} runs past the payload", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        let remaining = self.buf.len() - self.pos;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= remaining)
            .ok_or_else(|| CheckpointError::Corrupt(format!("length {n} exceeds remaining {remaining} bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.len()?;
        self.take(n)
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor), CheckpointError> {
        let name = self.string()?;
        let rank = self.u32()? as usize;
        if rank > 2 {
            return Err(CheckpointError::Corrupt(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = self.u64()?;
            let d = usize::try_from(d).map_err(|_| CheckpointError::Corrupt(format!("dimension {d} too large")))?;
            count = count
                .checked_mul(d)
                .filter(|c| c.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.pos))
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name} larger than the payload")))?;
            shape.push(d);
        }
        let raw = self.take(count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }
}

/// Parses checkpoint bytes. Nothing is returned unless every check passes.
pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams, CheckpointError> {
    if bytes.len() < HEADER {
        if bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::Magic);
        }
        return Err(CheckpointError::Truncated {
            expected: HEADER + DIGEST,
            found: bytes.len(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let payload_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = usize::try_from(payload_len)
        .ok()
        .and_then(|p| p.checked_add(HEADER + DIGEST))
        .ok_or_else(|| CheckpointError::Corrupt(format!("payload length {payload_len} out of range")))?;
    if bytes.len() < expected {
        return Err(CheckpointError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let body = &bytes[..expected - DIGEST];
    if Sha256::digest(body).as_slice() != &bytes[expected - DIGEST..] {
        return Err(CheckpointError::Corrupt("checksum mismatch".into()));
    }

    let mut cur = Cursor {
        buf: &body[HEADER..],
        pos: 0,
    };
    let config: ModelConfig =
        serde_json::from_slice(cur.bytes()?).map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
    let n_words = cur.len()?;
    let mut words = Vec::with_capacity(n_words.min(1 << 20));
    for _ in 0..n_words {
        words.push(cur.string()?);
    }
    let n_tensors = cur.len()?;
    if n_tensors != PARAM_NAMES.len() + 1 {
        return Err(CheckpointError::Corrupt(format!(
            "expected {} tensors, found {n_tensors}",
            PARAM_NAMES.len() + 1
        )));
    }
    let mut tensors = Vec::with_capacity(n_tensors);
    for expected_name in PARAM_NAMES.iter().copied().chain([WORD_VECTORS]) {
        let (name, t) = cur.tensor()?;
        if name != expected_name {
            return Err(CheckpointError::Corrupt(format!("expected tensor {expected_name}, found {name}")));
        }
        tensors.push(t);
    }
    if cur.pos != cur.buf.len() {
        return Err(CheckpointError::Corrupt("unread bytes after the last tensor".into()));
    }

    let word_vectors = tensors.pop().expect("counted");
    let specials = tensors.pop().expect("counted");
    let mut it = tensors.into_iter();
    let mut mlp = || Mlp {
        w1: it.next().expect("counted"),
        b1: it.next().expect("counted"),
        w2: it.next().expect("counted"),
        b2: it.next().expect("counted"),
    };
    let mlps = [mlp(), mlp(), mlp(), mlp(), mlp(), mlp()];
    Ok(ModelParams::assemble(config, mlps, specials, words, word_vectors)?)
}

/// Writes atomically: a temporary file in the target directory is renamed
/// over `path` once complete.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    let bytes = write_checkpoint(params)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CheckpointError::Io(e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, CheckpointError> {
    read_checkpoint(&std::fs::read(path)?)
}
