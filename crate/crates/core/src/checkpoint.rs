//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SPGCKPT\0"
//! version    u32
//! header     u64 length, then UTF-8 JSON (CheckpointHeader)
//! blocks     u64 count, then per block:
//!              u32 name length, name bytes,
//!              u32 rank, u64 per dimension,
//!              f32 values in row-major order
//! ```
//!
//! Nothing may follow the last block.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::params::{StateBlocks, StateError};

pub const MAGIC: &[u8; 8] = b"SPGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint length: {0}")]
    CorruptLength(String),
    #[error("corrupt checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint is missing block {0:?}")]
    MissingBlock(String),
    #[error("checkpoint has unexpected block {0:?}")]
    UnexpectedBlock(String),
    #[error("checkpoint block {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

impl From<StateError> for CheckpointError {
    fn from(e: StateError) -> Self {
        match e {
            StateError::Missing(name) => CheckpointError::MissingBlock(name),
            StateError::Shape { name, expected, found } => CheckpointError::ShapeMismatch { name, expected, found },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Completed training iterations.
    pub iteration: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Adam step counters keyed by network (`gen`, `back`, `disc`).
    pub optimizer_steps: BTreeMap<String, u64>,
    /// Power iterations applied to each spectrally normalised weight.
    pub spectral_iterations: BTreeMap<String, u64>,
    pub precision: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBundle {
    pub header: CheckpointHeader,
    pub blocks: StateBlocks<f32>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode(bundle: &CheckpointBundle) -> Vec<u8> {
    let header = serde_json::to_vec(&bundle.header).expect("header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(bundle.blocks.len() as u64).to_le_bytes());
    for (name, value) in &bundle.blocks {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.ndim() as u32).to_le_bytes());
        for &d in value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::CorruptLength(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let n = self.u64(what)?;
        usize::try_from(n).map_err(|_| CheckpointError::CorruptLength(format!("{what} {n} is too large")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<CheckpointBundle, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = r.len("header length")?;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(header_len, "header")?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let count = r.len("block count")?;
    let mut blocks = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32("block name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "block name")?.to_vec())
            .map_err(|_| CheckpointError::Header("block name is not UTF-8".into()))?;
        let rank = r.u32("block rank")? as usize;
        let dims = (0..rank).map(|_| r.len("block dimension")).collect::<Result<Vec<_>, _>>()?;
        let elems = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CheckpointError::CorruptLength(format!("block {name:?} is too large")))?;
        let data = r.take(elems, &format!("block {name:?}"))?;
        let values = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let array = ArrayD::from_shape_vec(IxDyn(&dims), values).expect("length checked");
        if blocks.insert(name.clone(), array).is_some() {
            return Err(CheckpointError::Header(format!("duplicate block {name:?}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::CorruptLength(format!(
            "{} trailing bytes after the last block",
            bytes.len() - r.pos
        )));
    }
    Ok(CheckpointBundle { header, blocks })
}

/// Writes to a temporary sibling file, then renames it into place.
pub fn save_checkpoint(bundle: &CheckpointBundle, path: &Path) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&encode(bundle)).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointBundle, CheckpointError> {
    decode(&fs::read(path).map_err(io_err(path))?)
}
