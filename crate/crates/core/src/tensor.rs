//! ABTF: a small self-describing binary tensor container.
//!
//! Layout on disk:
//!
//! ```text
//! +--------+----------------+----------------------+-----------------+
//! | "ABTF" | header_len u32 | header (canonical    | raw payload     |
//! |        | little-endian  | JSON, header_len B)  | (row-major, LE) |
//! +--------+----------------+----------------------+-----------------+
//! ```
//!
//! Canonical JSON means sorted object keys and no insignificant whitespace, so
//! serializing the same header twice always yields the same bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"ABTF";
pub const MAX_DIMS: usize = 4;
/// Headers are tiny; anything beyond this is a corrupt length field.
pub const MAX_HEADER_LEN: u32 = 1 << 20;

const LAYOUT_ROW_MAJOR: &str = "row-major";
const BYTE_ORDER_LITTLE: &str = "little";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {found:?}, expected \"ABTF\"")]
    BadMagic { found: [u8; 4] },
    #[error("file truncated: {what} needs {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),
    #[error("shape {shape:?} overflows the addressable payload size")]
    ShapeOverflow { shape: Vec<u64> },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<u64>, reason: &'static str },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("payload is {found} bytes but header describes {expected}")]
    PayloadMismatch { expected: u64, found: u64 },
    #[error("{found} trailing bytes after payload")]
    TrailingBytes { found: u64 },
    #[error("expected dtype {expected}, found {found}")]
    DtypeMismatch { expected: DType, found: DType },
    #[error("expected a rank-{expected} tensor, found shape {shape:?}")]
    RankMismatch { expected: usize, shape: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "u8")]
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }

    fn parse(s: &str) -> Result<Self, TensorError> {
        match s {
            "f32" => Ok(DType::F32),
            "u8" => Ok(DType::U8),
            other => Err(TensorError::UnknownDtype(other.to_string())),
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::U8 => "u8",
        })
    }
}

/// Header of an ABTF file.
///
/// `attrs` carries optional scalar metadata such as `frame_rate` or
/// `source_tag`; it is omitted from the serialized header when empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub attrs: BTreeMap<String, Value>,
}

/// Wire form of the header. Unknown dtypes must surface as `UnknownDtype`
/// rather than a generic JSON error, so dtype stays a string here.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireHeader {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attrs: BTreeMap<String, Value>,
    byte_order: String,
    dtype: String,
    layout: String,
    shape: Vec<u64>,
}

impl TensorHeader {
    pub fn new(dtype: DType, shape: impl Into<Vec<usize>>) -> Self {
        Self {
            dtype,
            shape: shape.into(),
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.attrs.insert(key.to_string(), value.into());
        self
    }

    pub fn attr_f64(&self, key: &str) -> Option<f64> {
        self.attrs.get(key).and_then(Value::as_f64)
    }

    pub fn attr_str(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).and_then(Value::as_str)
    }

    pub fn element_count(&self) -> Result<usize, TensorError> {
        let wide: Vec<u64> = self.shape.iter().map(|&d| d as u64).collect();
        check_shape(&wide)?;
        Ok(self.shape.iter().product())
    }

    /// Payload size in bytes implied by dtype and shape.
    pub fn payload_len(&self) -> Result<usize, TensorError> {
        let wide: Vec<u64> = self.shape.iter().map(|&d| d as u64).collect();
        checked_payload_len(&wide, self.dtype)
    }

    /// Canonical JSON encoding: sorted keys, compact separators.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        let wire = WireHeader {
            attrs: self.attrs.clone(),
            byte_order: BYTE_ORDER_LITTLE.to_string(),
            dtype: self.dtype.to_string(),
            layout: LAYOUT_ROW_MAJOR.to_string(),
            shape: self.shape.iter().map(|&d| d as u64).collect(),
        };
        // Round-trip through Value: serde_json's map is a BTreeMap, which sorts
        // nested attribute keys as well.
        let value = serde_json::to_value(&wire).expect("header is always serializable");
        serde_json::to_vec(&value).expect("value is always serializable")
    }

    fn from_json(bytes: &[u8]) -> Result<Self, TensorError> {
        let wire: WireHeader = serde_json::from_slice(bytes)
            .map_err(|e| TensorError::InvalidHeader(e.to_string()))?;
        let dtype = DType::parse(&wire.dtype)?;
        if wire.layout != LAYOUT_ROW_MAJOR {
            return Err(TensorError::InvalidHeader(format!(
                "unsupported layout {:?}",
                wire.layout
            )));
        }
        if wire.byte_order != BYTE_ORDER_LITTLE {
            return Err(TensorError::InvalidHeader(format!(
                "unsupported byte order {:?}",
                wire.byte_order
            )));
        }
        checked_payload_len(&wire.shape, dtype)?;
        Ok(Self {
            dtype,
            shape: wire.shape.iter().map(|&d| d as usize).collect(),
            attrs: wire.attrs,
        })
    }
}

fn check_shape(shape: &[u64]) -> Result<(), TensorError> {
    if shape.is_empty() {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "shape must have at least one dimension",
        });
    }
    if shape.len() > MAX_DIMS {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "at most 4 dimensions are supported",
        });
    }
    if shape.contains(&0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "every dimension must be at least 1",
        });
    }
    Ok(())
}

fn checked_payload_len(shape: &[u64], dtype: DType) -> Result<usize, TensorError> {
    check_shape(shape)?;
    let overflow = || TensorError::ShapeOverflow {
        shape: shape.to_vec(),
    };
    let bytes = shape
        .iter()
        .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(overflow)?;
    // Payloads must also be addressable in memory on this platform.
    if bytes > isize::MAX as u64 {
        return Err(overflow());
    }
    usize::try_from(bytes).map_err(|_| overflow())
}

/// A header plus its raw little-endian payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub header: TensorHeader,
    pub payload: Vec<u8>,
}

impl Tensor {
    pub fn new(header: TensorHeader, payload: Vec<u8>) -> Result<Self, TensorError> {
        let expected = header.payload_len()?;
        if expected != payload.len() {
            return Err(TensorError::PayloadMismatch {
                expected: expected as u64,
                found: payload.len() as u64,
            });
        }
        Ok(Self { header, payload })
    }

    pub fn from_f32(shape: impl Into<Vec<usize>>, values: &[f32]) -> Result<Self, TensorError> {
        let header = TensorHeader::new(DType::F32, shape);
        let payload = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::new(header, payload)
    }

    pub fn from_u8(shape: impl Into<Vec<usize>>, values: Vec<u8>) -> Result<Self, TensorError> {
        Self::new(TensorHeader::new(DType::U8, shape), values)
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.header = self.header.with_attr(key, value);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.header.shape
    }

    pub fn expect_rank(&self, rank: usize) -> Result<&[usize], TensorError> {
        if self.header.shape.len() != rank {
            return Err(TensorError::RankMismatch {
                expected: rank,
                shape: self.header.shape.clone(),
            });
        }
        Ok(&self.header.shape)
    }

    pub fn to_f32(&self) -> Result<Vec<f32>, TensorError> {
        self.expect_dtype(DType::F32)?;
        Ok(self
            .payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn as_u8(&self) -> Result<&[u8], TensorError> {
        self.expect_dtype(DType::U8)?;
        Ok(&self.payload)
    }

    fn expect_dtype(&self, dtype: DType) -> Result<(), TensorError> {
        if self.header.dtype != dtype {
            return Err(TensorError::DtypeMismatch {
                expected: dtype,
                found: self.header.dtype,
            });
        }
        Ok(())
    }

    /// Full on-disk encoding.
    pub fn encode(&self) -> Vec<u8> {
        let header = self.header.to_canonical_json();
        let mut out = Vec::with_capacity(8 + header.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        let truncated = |what, expected: usize, found: usize| TensorError::Truncated {
            what,
            expected: expected as u64,
            found: found as u64,
        };
        if bytes.len() < 4 {
            return Err(truncated("magic", 4, bytes.len()));
        }
        if &bytes[..4] != MAGIC {
            let mut found = [0u8; 4];
            found.copy_from_slice(&bytes[..4]);
            return Err(TensorError::BadMagic { found });
        }
        if bytes.len() < 8 {
            return Err(truncated("header length", 8, bytes.len()));
        }
        let header_len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
        if header_len > MAX_HEADER_LEN {
            return Err(TensorError::InvalidHeader(format!(
                "header length {header_len} exceeds limit {MAX_HEADER_LEN}"
            )));
        }
        let header_end = 8 + header_len as usize;
        if bytes.len() < header_end {
            return Err(truncated("header", header_end, bytes.len()));
        }
        let header = TensorHeader::from_json(&bytes[8..header_end])?;
        let payload_len = header.payload_len()?;
        let rest = &bytes[header_end..];
        if rest.len() < payload_len {
            return Err(truncated("payload", payload_len, rest.len()));
        }
        if rest.len() > payload_len {
            return Err(TensorError::TrailingBytes {
                found: (rest.len() - payload_len) as u64,
            });
        }
        Ok(Self {
            header,
            payload: rest.to_vec(),
        })
    }
}

/// Writes `header` and `payload` to `path` in ABTF format.
pub fn write_tensor_file(
    path: impl AsRef<Path>,
    header: &TensorHeader,
    payload: &[u8],
) -> Result<(), TensorError> {
    let path = path.as_ref();
    let expected = header.payload_len()?;
    if expected != payload.len() {
        return Err(TensorError::PayloadMismatch {
            expected: expected as u64,
            found: payload.len() as u64,
        });
    }
    let io = |source| TensorError::Io {
        path: path.display().to_string(),
        source,
    };
    let json = header.to_canonical_json();
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    w.write_all(payload).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<(TensorHeader, Vec<u8>), TensorError> {
    let t = load_tensor(path)?;
    Ok((t.header, t.payload))
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<(), TensorError> {
    write_tensor_file(path, &tensor.header, &tensor.payload)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    let path = path.as_ref();
    let io = |source| TensorError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(io)?
        .read_to_end(&mut bytes)
        .map_err(io)?;
    Tensor::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_f32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.abtf");
        let header = TensorHeader::new(DType::F32, vec![2, 2]);
        write_tensor_file(&path, &header, &[0u8; 16]).unwrap();
        let (h, p) = read_tensor_file(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(p, vec![0u8; 16]);
    }

    #[test]
    fn file_length_matches_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.abtf");
        let header = TensorHeader::new(DType::U8, vec![1]);
        write_tensor_file(&path, &header, &[1]).unwrap();
        // Hand-written canonical form: keys sorted, no whitespace.
        let json = br#"{"byte_order":"little","dtype":"u8","layout":"row-major","shape":[1]}"#;
        assert_eq!(header.to_canonical_json(), json.to_vec());
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, 4 + 4 + json.len() + 1);
    }

    #[test]
    fn payload_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let header = TensorHeader::new(DType::F32, vec![3]);
        let err = write_tensor_file(dir.path().join("x"), &header, &[0u8; 8]).unwrap_err();
        assert!(matches!(
            err,
            TensorError::PayloadMismatch {
                expected: 12,
                found: 8
            }
        ));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = Tensor::from_u8(vec![1], vec![1]).unwrap().encode();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            Tensor::decode(&bytes),
            Err(TensorError::BadMagic { found }) if &found == b"XXXX"
        ));
    }

    #[test]
    fn truncated_payload() {
        let bytes = Tensor::from_f32(vec![4], &[1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .encode();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Tensor::decode(cut),
            Err(TensorError::Truncated { what: "payload", .. })
        ));
    }

    #[test]
    fn unknown_dtype() {
        let json = br#"{"byte_order":"little","dtype":"f16","layout":"row-major","shape":[1]}"#;
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(json);
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(
            Tensor::decode(&bytes),
            Err(TensorError::UnknownDtype(d)) if d == "f16"
        ));
    }

    #[test]
    fn shape_overflow() {
        let json = format!(
            r#"{{"byte_order":"little","dtype":"f32","layout":"row-major","shape":[{},{}]}}"#,
            u64::MAX / 2,
            3
        );
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(json.as_bytes());
        assert!(matches!(
            Tensor::decode(&bytes),
            Err(TensorError::ShapeOverflow { .. })
        ));
    }

    #[test]
    fn rank_limits() {
        assert!(matches!(
            TensorHeader::new(DType::U8, vec![1, 1, 1, 1, 1]).payload_len(),
            Err(TensorError::InvalidShape { .. })
        ));
        assert!(matches!(
            TensorHeader::new(DType::U8, vec![2, 0]).payload_len(),
            Err(TensorError::InvalidShape { .. })
        ));
        assert!(matches!(
            TensorHeader::new(DType::U8, Vec::<usize>::new()).payload_len(),
            Err(TensorError::InvalidShape { .. })
        ));
    }

    #[test]
    fn attrs_survive_and_stay_sorted() {
        let t = Tensor::from_f32(vec![1], &[0.5])
            .unwrap()
            .with_attr("zeta", 1)
            .with_attr("frame_rate", 24.0);
        let json = String::from_utf8(t.header.to_canonical_json()).unwrap();
        assert!(json.starts_with(r#"{"attrs":{"frame_rate":24.0,"zeta":1}"#));
        let back = Tensor::decode(&t.encode()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.header.attr_f64("frame_rate"), Some(24.0));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = Tensor::from_u8(vec![2], vec![0, 1]).unwrap().encode();
        bytes.push(9);
        assert!(matches!(
            Tensor::decode(&bytes),
            Err(TensorError::TrailingBytes { found: 1 })
        ));
    }
}
