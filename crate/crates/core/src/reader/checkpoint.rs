//! Checkpoint container: one JSON header line, then every array as
//! little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ReaderDims, ReaderParams, PARAM_NAMES};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    dims: ReaderDims,
    vocab: Vec<String>,
    vocab_hash: String,
    #[serde(default)]
    meta: serde_json::Value,
}

/// A loaded reader with the vocabulary it was trained against.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ReaderParams,
    pub vocab: Vocabulary,
    /// Free-form run information (seed, role, epochs).
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dims = self.params.dims();
        if dims.vocab_size != self.vocab.len() {
            return Err(Error::Internal(format!(
                "embedding has {} rows but vocabulary has {} entries",
                dims.vocab_size,
                self.vocab.len()
            )));
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            names: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
            shapes: dims.shapes(),
            dims,
            vocab: self.vocab.tokens().to_vec(),
            vocab_hash: self.vocab.hash(),
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&header).map_err(|e| Error::Internal(e.to_string()))?;
        out.push(b'\n');
        out.reserve(4 * self.params.parameter_count());
        for t in self.params.tensors() {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Data(format!("{}: {msg}", origin.display()));
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing checkpoint header".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("unreadable header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", header.format_version)));
        }
        if header.names != PARAM_NAMES || header.shapes != header.dims.shapes() {
            return Err(bad("array names or shapes do not match the reader layout".into()));
        }
        let vocab = Vocabulary::from_tokens(header.vocab)?;
        if vocab.hash() != header.vocab_hash {
            return Err(Error::VocabMismatch {
                hash: header.vocab_hash,
                detail: format!("stored vocabulary hashes to {}", vocab.hash()),
            });
        }
        if vocab.len() != header.dims.vocab_size {
            return Err(Error::VocabMismatch {
                hash: header.vocab_hash,
                detail: format!("{} embedding rows for {} vocabulary entries", header.dims.vocab_size, vocab.len()),
            });
        }
        let body = &bytes[nl + 1..];
        let expected = 4 * header.dims.parameter_count();
        if body.len() != expected {
            return Err(bad(format!("expected {expected} bytes of parameters, found {}", body.len())));
        }
        let mut values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut tensors = Vec::with_capacity(header.shapes.len());
        for shape in header.shapes {
            let n = shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            tensors.push(Tensor::new(shape, data).map_err(|_| bad("non-finite parameter value".into()))?);
        }
        Ok(Self {
            params: ReaderParams::from_tensors(header.dims, tensors)?,
            vocab,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Example;

    fn sample() -> Checkpoint {
        let vocab = Vocabulary::build(&[Example::from_text("a", "Who ran?", "Ann ran far.")], 100);
        let dims = ReaderDims::new(vocab.len(), 3, 2).unwrap();
        let mut params = ReaderParams::init(dims, 4);
        params.round_to_f32();
        Checkpoint {
            params,
            vocab,
            meta: serde_json::json!({"seed": 4}),
        }
    }

    #[test]
    fn round_trip_is_exact_after_f32_rounding() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.params, ck.params);
        assert_eq!(back.vocab, ck.vocab);
        assert_eq!(back.meta["seed"], 4);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let v: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["names"][0], "embedding");
        assert_eq!(v["shapes"][1], serde_json::json!([9, 2]));
        assert_eq!(bytes.len() - nl - 1, 4 * sample().params.parameter_count());
    }

    #[test]
    fn corrupt_files_are_data_errors() {
        let bytes = sample().to_bytes().unwrap();
        let p = Path::new("mem");
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p),
            Err(Error::Data(_))
        ));
        assert!(Checkpoint::from_bytes(b"{}", p).is_err());
        let text = String::from_utf8_lossy(&bytes).replacen("\"format_version\":1", "\"format_version\":7", 1);
        assert!(Checkpoint::from_bytes(text.as_bytes(), p).is_err());
    }

    #[test]
    fn tampered_vocabulary_is_named_by_hash() {
        let bytes = sample().to_bytes().unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        header["vocab"][2] = "zzz".into();
        let mut tampered = serde_json::to_vec(&header).unwrap();
        tampered.extend_from_slice(&bytes[nl..]);
        let err = Checkpoint::from_bytes(&tampered, Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::VocabMismatch { .. }));
    }
}
