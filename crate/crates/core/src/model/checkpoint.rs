//! Checkpoint file: a JSON header followed by named `f32` tensors.
//!
//! ```text
//! magic   b"URACKPT\0"
//! u32     format version
//! u64     header length, then that many bytes of JSON
//!         {"config": ModelConfig, "vocab_hash": str, "step": u64, "tasks": TaskFlags}
//! u32     tensor count
//! per tensor:
//!   u32 name length, UTF-8 name
//!   u32 ndim, ndim × u64 dims
//!   row-major little-endian f32 data
//! ```
//!
//! All integers are little-endian.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::autograd::Mat;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"URACKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which training objectives produced a checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFlags {
    pub pr: bool,
    pub pr_global: bool,
    pub ta: bool,
    pub va: bool,
}

impl TaskFlags {
    pub const ALL: TaskFlags = TaskFlags {
        pr: true,
        pr_global: false,
        ta: true,
        va: true,
    };

    pub fn retrieval(&self) -> bool {
        self.pr || self.pr_global
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pr || self.pr_global || self.ta || self.va) {
            return Err(Error::InvalidArgument("at least one task flag must be on".into()));
        }
        if self.pr && self.pr_global {
            return Err(Error::InvalidArgument("PR and PR_global are mutually exclusive".into()));
        }
        Ok(())
    }

    /// Parses a `+`- or `,`-separated list such as `PR+TA+VA` or `pr_g`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut f = TaskFlags::default();
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "pr" => f.pr = true,
                "pr_g" | "pr_global" => f.pr_global = true,
                "ta" => f.ta = true,
                "va" => f.va = true,
                "ura" | "all" => f = TaskFlags::ALL,
                other => return Err(Error::InvalidArgument(format!("unknown task flag {other:?}"))),
            }
        }
        f.validate()?;
        Ok(f)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.pr {
            parts.push("PR");
        }
        if self.pr_global {
            parts.push("PR_g");
        }
        if self.ta {
            parts.push("TA");
        }
        if self.va {
            parts.push("VA");
        }
        parts.join("+")
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: String,
    step: u64,
    tasks: TaskFlags,
}

/// Trained parameters with the metadata needed to use them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab_hash: String,
    pub step: u64,
    pub tasks: TaskFlags,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.model.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            step: self.step,
            tasks: self.tasks,
        })?;
        let mut out = Vec::with_capacity(self.model.params.n_scalars() * 4 + header.len() + 64);
        let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
        out.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(io)?;
        out.write_u64::<LittleEndian>(header.len() as u64).map_err(io)?;
        out.write_all(&header).map_err(io)?;
        out.write_u32::<LittleEndian>(self.model.params.len() as u32).map_err(io)?;
        for (_, name, value) in self.model.params.iter() {
            out.write_u32::<LittleEndian>(name.len() as u32).map_err(io)?;
            out.write_all(name.as_bytes()).map_err(io)?;
            out.write_u32::<LittleEndian>(2).map_err(io)?;
            out.write_u64::<LittleEndian>(value.nrows() as u64).map_err(io)?;
            out.write_u64::<LittleEndian>(value.ncols() as u64).map_err(io)?;
            for &x in value.iter() {
                out.write_f32::<LittleEndian>(x as f32).map_err(io)?;
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint. With `expected_vocab_hash` set, a checkpoint
    /// trained against a different vocabulary is rejected.
    pub fn from_bytes(bytes: &[u8], expected_vocab_hash: Option<&str>) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let io = |e: std::io::Error| Error::Checkpoint(format!("truncated checkpoint: {e}"));
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        if header_len > bytes.len() {
            return Err(bad("header length exceeds file size".into()));
        }
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header).map_err(io)?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| bad(format!("bad header: {e}")))?;
        if let Some(expected) = expected_vocab_hash {
            if expected != header.vocab_hash {
                return Err(Error::HashMismatch {
                    expected: expected.to_string(),
                    found: header.vocab_hash,
                });
            }
        }
        let mut model = Model::new(header.config, 0)?;
        let n = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        if n != model.params.len() {
            return Err(bad(format!("{n} tensors, config implies {}", model.params.len())));
        }
        for _ in 0..n {
            let name_len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
            if name_len > 4096 {
                return Err(bad("tensor name too long".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8".into()))?;
            let ndim = r.read_u32::<LittleEndian>().map_err(io)?;
            if ndim != 2 {
                return Err(bad(format!("tensor {name} has {ndim} dims")));
            }
            let rows = r.read_u64::<LittleEndian>().map_err(io)? as usize;
            let cols = r.read_u64::<LittleEndian>().map_err(io)? as usize;
            let id = model.params.id(&name).ok_or_else(|| bad(format!("unexpected tensor {name}")))?;
            if model.params.value(id).dim() != (rows, cols) {
                return Err(bad(format!(
                    "tensor {name} is {rows}×{cols}, config implies {:?}",
                    model.params.value(id).dim()
                )));
            }
            let mut data = vec![0f32; rows * cols];
            r.read_f32_into::<LittleEndian>(&mut data).map_err(io)?;
            *model.params.value_mut(id) =
                Mat::from_shape_vec((rows, cols), data.into_iter().map(f64::from).collect()).expect("shape checked");
        }
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes after last tensor".into()));
        }
        Ok(Checkpoint {
            model,
            vocab_hash: header.vocab_hash,
            step: header.step,
            tasks: header.tasks,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))?;
        Ok(content_hash(&bytes))
    }

    pub fn load(path: impl AsRef<Path>, expected_vocab_hash: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected_vocab_hash)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(content_hash(&self.to_bytes()?))
    }
}

pub(crate) fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::small_config;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ckpt() -> Checkpoint {
        Checkpoint {
            model: Model::new(small_config(), 21).unwrap(),
            vocab_hash: "abc".into(),
            step: 17,
            tasks: TaskFlags::ALL,
        }
    }

    #[test]
    fn round_trip_preserves_forward_outputs() {
        let c = ckpt();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let h1 = c.save(&path).unwrap();
        let back = Checkpoint::load(&path, Some("abc")).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.tasks, TaskFlags::ALL);
        assert_eq!(back.model.params, c.model.params);
        assert_eq!(back.hash().unwrap(), h1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let len = rng.gen_range(1..10);
            let e = Mat::from_shape_fn((len, 16), |_| rng.gen_range(-1.0..1.0));
            let mask = vec![true; len];
            assert_eq!(
                c.model.encode_values(&e, &mask).unwrap(),
                back.model.encode_values(&e, &mask).unwrap()
            );
        }
    }

    #[test]
    fn wrong_vocab_hash_is_rejected() {
        let bytes = ckpt().to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, Some("zzz")),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = ckpt().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], None).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, None).is_err());
        assert!(Checkpoint::from_bytes(b"nope", None).is_err());
    }

    #[test]
    fn task_flag_parsing() {
        assert_eq!(TaskFlags::parse("PR+TA+VA").unwrap(), TaskFlags::ALL);
        assert_eq!(TaskFlags::parse("pr_g").unwrap().label(), "PR_g");
        assert!(TaskFlags::parse("PR+PR_g").is_err());
        assert!(TaskFlags::parse("").is_err());
        assert!(TaskFlags::parse("XX").is_err());
    }
}
