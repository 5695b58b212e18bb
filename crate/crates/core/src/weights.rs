//! The `ENTPRUN1` named-tensor archive format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..8    magic "ENTPRUN1"
//! bytes 8..16   u64 header length H
//! bytes 16..16+H UTF-8 JSON: { name: {"dtype":"f32","shape":[..],"offset":N,"nbytes":N}, ... }
//! bytes 16+H..  payload
//! ```
//!
//! Offsets are relative to the payload start and 64-byte aligned; `nbytes`
//! must equal `product(shape) * 4` (only f32 is supported). Tensor data is
//! raw little-endian f32, row-major. The format is deliberately trivial to
//! write from any language, so converting public checkpoints needs only a
//! small external script.
//!
//! A loaded archive keeps its header and payload bytes verbatim; storing it
//! again reproduces the input byte for byte, even for archives produced by
//! other writers.
//!
//! Canonical tensor names for a ViT checkpoint:
//!
//! ```text
//! patch_embed.weight              [d, p*p*C]   (conv kernel flattened [c][y][x])
//! patch_embed.bias                [d]
//! pos_embed                       [n_tokens, d] (row 0 = class position)
//! cls_token                       [d]
//! blocks.{i}.ln1.gamma / .beta    [d]
//! blocks.{i}.ln2.gamma / .beta    [d]
//! blocks.{i}.attn.wq.weight       [d, d]       (rows = outputs; head h owns rows h*d'..)
//! blocks.{i}.attn.wq.bias         [d]          (same for wk, wv, wo)
//! blocks.{i}.ffn.fc1.weight       [hidden, d]
//! blocks.{i}.ffn.fc1.bias         [hidden]
//! blocks.{i}.ffn.fc2.weight       [d, hidden]
//! blocks.{i}.ffn.fc2.bias         [d]
//! norm.gamma / norm.beta          [d]          (final layer norm before the head)
//! head.weight                     [num_classes, d]
//! head.bias                       [num_classes]
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 8] = b"ENTPRUN1";
pub const ALIGN: u64 = 64;

#[derive(Debug, Clone)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Deserialize)]
struct RawEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

/// Immutable named-tensor archive. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct WeightArchive {
    entries: BTreeMap<String, TensorEntry>,
    header_bytes: Vec<u8>,
    payload: Vec<u8>,
}

impl WeightArchive {
    pub fn from_bytes(bytes: &[u8]) -> Result<WeightArchive> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Parse("missing ENTPRUN1 magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if header_len > body.len() {
            return Err(Error::Parse(format!(
                "declared header length {} exceeds file size",
                header_len
            )));
        }
        let header_bytes = body[..header_len].to_vec();
        let payload = body[header_len..].to_vec();

        let raw: BTreeMap<String, RawEntry> = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Parse(format!("archive header is not valid JSON: {e}")))?;

        let mut entries = BTreeMap::new();
        for (name, e) in raw {
            if e.dtype != "f32" {
                return Err(Error::Parse(format!(
                    "tensor '{}' has unsupported dtype '{}'",
                    name, e.dtype
                )));
            }
            let elems: usize = e.shape.iter().product();
            if e.nbytes != elems as u64 * 4 {
                return Err(Error::Integrity(format!(
                    "tensor '{}': nbytes {} != product(shape) * 4 = {}",
                    name,
                    e.nbytes,
                    elems * 4
                )));
            }
            if e.offset % ALIGN != 0 {
                return Err(Error::Integrity(format!(
                    "tensor '{}': offset {} not {}-byte aligned",
                    name, e.offset, ALIGN
                )));
            }
            if e.offset + e.nbytes > payload.len() as u64 {
                return Err(Error::Integrity(format!(
                    "tensor '{}' extends past end of payload ({} + {} > {})",
                    name,
                    e.offset,
                    e.nbytes,
                    payload.len()
                )));
            }
            entries.insert(
                name,
                TensorEntry {
                    shape: e.shape,
                    offset: e.offset,
                    nbytes: e.nbytes,
                },
            );
        }

        // Entries must not overlap.
        let mut spans: Vec<(u64, u64, &str)> = entries
            .iter()
            .map(|(n, e)| (e.offset, e.offset + e.nbytes, n.as_str()))
            .collect();
        spans.sort();
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::Integrity(format!(
                    "tensors '{}' and '{}' overlap",
                    pair[0].2, pair[1].2
                )));
            }
        }

        Ok(WeightArchive {
            entries,
            header_bytes,
            payload,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<WeightArchive> {
        WeightArchive::from_bytes(&std::fs::read(path)?)
    }

    /// Serialize back to bytes. Preserves the original header verbatim, so
    /// `to_bytes(from_bytes(a)) == a` for every valid archive.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.header_bytes.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.header_bytes);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    fn raw_f64(&self, name: &str) -> Result<(&TensorEntry, Vec<f64>)> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| Error::NotFound(name.into()))?;
        let start = entry.offset as usize;
        let end = start + entry.nbytes as usize;
        let values = self.payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok((entry, values))
    }

    /// Fetch a tensor as a Matrix, widening f32 to f64. The caller states the
    /// shape it expects; any mismatch fails loudly rather than reinterpreting.
    pub fn get_tensor(&self, name: &str, expected: &[usize]) -> Result<Matrix> {
        let (entry, values) = self.raw_f64(name)?;
        if entry.shape != expected {
            return Err(Error::Shape(format!(
                "tensor '{}' has shape {:?}, expected {:?}",
                name, entry.shape, expected
            )));
        }
        match expected {
            [n] => Matrix::from_vec(1, *n, values),
            [r, c] => Matrix::from_vec(*r, *c, values),
            other => Err(Error::Shape(format!(
                "tensor '{}': rank {} not supported as a matrix",
                name,
                other.len()
            ))),
        }
    }

    /// Fetch a rank-1 tensor as a plain vector.
    pub fn get_vector(&self, name: &str, expected_len: usize) -> Result<Vec<f64>> {
        let (entry, values) = self.raw_f64(name)?;
        if entry.shape != [expected_len] {
            return Err(Error::Shape(format!(
                "tensor '{}' has shape {:?}, expected [{}]",
                name, entry.shape, expected_len
            )));
        }
        Ok(values)
    }
}

/// Builds archives with canonical (sorted-key, compact JSON) headers and
/// 64-byte aligned payload offsets.
#[derive(Default)]
pub struct ArchiveBuilder {
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl ArchiveBuilder {
    pub fn new() -> ArchiveBuilder {
        ArchiveBuilder::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: &[f32]) -> &mut Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor '{}': shape/data mismatch",
            name
        );
        self.tensors
            .insert(name.to_string(), (shape.to_vec(), data.to_vec()));
        self
    }

    pub fn build(&self) -> WeightArchive {
        let mut payload = Vec::new();
        let mut header = BTreeMap::new();
        for (name, (shape, data)) in &self.tensors {
            while !(payload.len() as u64).is_multiple_of(ALIGN) {
                payload.push(0);
            }
            let offset = payload.len() as u64;
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            header.insert(
                name.clone(),
                serde_json::json!({
                    "dtype": "f32",
                    "shape": shape,
                    "offset": offset,
                    "nbytes": data.len() * 4,
                }),
            );
        }
        let header_bytes = serde_json::to_vec(&header).expect("header serialization");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header_bytes);
        bytes.extend_from_slice(&payload);
        WeightArchive::from_bytes(&bytes).expect("builder produces valid archives")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let mut b = ArchiveBuilder::new();
        b.add("w", &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let archive = b.build();
        let bytes = archive.to_bytes();
        let reloaded = WeightArchive::from_bytes(&bytes).unwrap();
        assert_eq!(reloaded.to_bytes(), bytes);
        let m = reloaded.get_tensor("w", &[2, 2]).unwrap();
        assert_eq!(m.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn offset_past_end_is_integrity_error() {
        let header = br#"{"w":{"dtype":"f32","shape":[2,2],"offset":0,"nbytes":16}}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0u8; 8]); // payload too short
        assert!(matches!(
            WeightArchive::from_bytes(&bytes),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn external_writer_archive_loads_and_round_trips() {
        // Hand-rolled header with non-canonical whitespace and key order, as
        // an independent script might emit.
        let header = br#"{ "b" : {"dtype":"f32","shape":[2],"offset":64,"nbytes":8},
  "a": {"dtype":"f32","shape":[1,2],"offset":0,"nbytes":8} }"#;
        let mut payload = vec![0u8; 72];
        payload[0..4].copy_from_slice(&0.5f32.to_le_bytes());
        payload[4..8].copy_from_slice(&(-2.0f32).to_le_bytes());
        payload[64..68].copy_from_slice(&0.1f32.to_le_bytes());
        payload[68..72].copy_from_slice(&7.0f32.to_le_bytes());
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&payload);

        let archive = WeightArchive::from_bytes(&bytes).unwrap();
        assert_eq!(
            archive.get_tensor("a", &[1, 2]).unwrap().data(),
            &[0.5, -2.0]
        );
        let b = archive.get_vector("b", 2).unwrap();
        assert_eq!(b[0], 0.1f32 as f64);
        assert_eq!(b[1], 7.0);
        // Verbatim header preservation keeps the round trip exact.
        assert_eq!(archive.to_bytes(), bytes);
    }

    #[test]
    fn widening_matches_f32_nearest() {
        let mut b = ArchiveBuilder::new();
        b.add("x", &[1], &[0.1f32]);
        let v = b.build().get_vector("x", 1).unwrap();
        assert_eq!(v[0], 0.1f32 as f64);
        assert_eq!(v[0], 0.10000000149011612);
    }

    #[test]
    fn missing_tensor_is_not_found() {
        let archive = ArchiveBuilder::new().build();
        assert!(matches!(
            archive.get_tensor("absent", &[1]),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn shape_mismatch_fails_loudly() {
        let mut b = ArchiveBuilder::new();
        b.add("w", &[2, 2], &[1.0; 4]);
        let archive = b.build();
        assert!(matches!(
            archive.get_tensor("w", &[4]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn overlapping_entries_rejected() {
        let header = br#"{"a":{"dtype":"f32","shape":[4],"offset":0,"nbytes":16},"b":{"dtype":"f32","shape":[4],"offset":0,"nbytes":16}}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0u8; 16]);
        assert!(matches!(
            WeightArchive::from_bytes(&bytes),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn misaligned_offset_rejected() {
        let header = br#"{"a":{"dtype":"f32","shape":[1],"offset":4,"nbytes":4}}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(matches!(
            WeightArchive::from_bytes(&bytes),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn bad_magic_is_parse_error() {
        assert!(matches!(
            WeightArchive::from_bytes(b"NOTMAGIC\0\0\0\0\0\0\0\0"),
            Err(Error::Parse(_))
        ));
    }
}
