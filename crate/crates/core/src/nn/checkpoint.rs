//! Named-tensor files: an 8-byte magic, a little-endian `u32` header length,
//! a JSON header (free-form metadata plus the tensor manifest) and the raw
//! little-endian values in manifest order.

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::generator::{Generator, GeneratorConfig};
use super::params::ParamSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CKPT1\0\0\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f32le")]
    F32,
    #[serde(rename = "f64le")]
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn write_tensor_file(
    path: impl AsRef<Path>,
    magic: &[u8; 8],
    meta: serde_json::Value,
    tensors: &ParamSet,
    dtype: DType,
) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        meta,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype,
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(12 + header.len() + tensors.num_elements() * dtype.width());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, t) in tensors.iter() {
        for v in t.iter() {
            match dtype {
                DType::F32 => buf.extend_from_slice(&(*v as f32).to_le_bytes()),
                DType::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Returns the metadata and tensors. Rejects a wrong magic, a malformed
/// header or a data section whose length disagrees with the manifest.
pub fn read_tensor_file(
    path: impl AsRef<Path>,
    magic: &[u8; 8],
) -> Result<(serde_json::Value, ParamSet)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::format("tensor file", path, reason);
    if bytes.len() < 12 || &bytes[..8] != magic {
        return Err(bad(format!(
            "missing magic {:?}",
            String::from_utf8_lossy(magic).trim_end_matches('\0')
        )));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| bad("truncated header".to_string()))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| bad(format!("bad header: {e}")))?;
    let mut pos = 12 + hlen;
    let mut tensors = ParamSet::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let w = entry.dtype.width();
        let raw = bytes
            .get(pos..pos + n * w)
            .ok_or_else(|| bad(format!("truncated data for {}", entry.name)))?;
        pos += n * w;
        let values: Vec<f64> = match entry.dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).expect("length checked");
        tensors.insert(entry.name, t);
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok((header.meta, tensors))
}

/// A generator with its config snapshot and role label (for example
/// `reverb_noise_to_clean`), stored as 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub role: String,
    pub generator: Generator,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    model: String,
    role: String,
    config: GeneratorConfig,
}

impl ModelCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = CheckpointMeta {
            format: "CKPT1".into(),
            model: "generator".into(),
            role: self.role.clone(),
            config: self.generator.config().clone(),
        };
        let meta = serde_json::to_value(meta).expect("meta serializes");
        write_tensor_file(
            path,
            CHECKPOINT_MAGIC,
            meta,
            self.generator.params(),
            DType::F32,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (meta, params) = read_tensor_file(path, CHECKPOINT_MAGIC)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)
            .map_err(|e| Error::format("checkpoint", path, format!("bad metadata: {e}")))?;
        if meta.model != "generator" {
            return Err(Error::format(
                "checkpoint",
                path,
                format!("unsupported model {}", meta.model),
            ));
        }
        let generator = Generator::from_params(meta.config, params)
            .map_err(|e| Error::format("checkpoint", path, e.to_string()))?;
        if !generator.params().all_finite() {
            return Err(Error::format("checkpoint", path, "non-finite parameters"));
        }
        Ok(Self {
            role: meta.role,
            generator,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            base_filters: 2,
            n_residual_blocks: 1,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Generator::new(tiny(), 3).unwrap();
        let ck = ModelCheckpoint {
            role: "reverb_noise_to_clean".into(),
            generator: g.clone(),
        };
        let path = dir.path().join("g.ckpt");
        ck.save(&path).unwrap();
        let back = ModelCheckpoint::load(&path).unwrap();
        assert_eq!(back.role, ck.role);
        assert_eq!(back.generator.config(), g.config());
        for ((na, a), (nb, b)) in g.params().iter().zip(back.generator.params().iter()) {
            assert_eq!(na, nb);
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    }

    #[test]
    fn f64_file_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Generator::new(tiny(), 4).unwrap();
        let path = dir.path().join("s.bin");
        write_tensor_file(
            &path,
            b"TESTFILE",
            serde_json::json!({"k": 1}),
            g.params(),
            DType::F64,
        )
        .unwrap();
        let (meta, p) = read_tensor_file(&path, b"TESTFILE").unwrap();
        assert_eq!(meta["k"], 1);
        assert_eq!(&p, g.params());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        ModelCheckpoint {
            role: "x".into(),
            generator: Generator::new(tiny(), 1).unwrap(),
        }
        .save(&path)
        .unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let truncated = dir.path().join("t.ckpt");
        std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            ModelCheckpoint::load(&truncated),
            Err(Error::Format { .. })
        ));

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        std::fs::write(&truncated, &wrong).unwrap();
        assert!(matches!(
            ModelCheckpoint::load(&truncated),
            Err(Error::Format { .. })
        ));

        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&truncated, &nan).unwrap();
        assert!(matches!(
            ModelCheckpoint::load(&truncated),
            Err(Error::Format { .. })
        ));

        assert!(matches!(
            ModelCheckpoint::load(dir.path().join("missing")),
            Err(Error::MissingFile(_))
        ));
    }
}
