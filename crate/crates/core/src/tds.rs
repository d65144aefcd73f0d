//! Binary dictionary-set file (`.tds`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TDS1"                      magic and format version
//! u64                         manifest length in bytes
//! manifest                    UTF-8 JSON: subject ids, labels, Tᵢ, block offsets
//! f64 blocks                  one per label, 3·Tᵢ × N values in row-major order
//! u64                         FNV-1a 64 checksum of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::{DictionarySet, ToothDictionary};
use crate::error::{Error, Result};
use crate::tooth::ToothLabel;

const MAGIC: &[u8; 4] = b"TDS1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    subject_ids: Vec<String>,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    label: ToothLabel,
    t_points: usize,
    /// Byte offset of the block relative to the end of the manifest.
    offset: u64,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn encode(set: &DictionarySet) -> Result<Vec<u8>> {
    let n = set.n_subjects();
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (label, d) in set.dictionaries() {
        entries.push(ManifestEntry {
            label: *label,
            t_points: d.t_points(),
            offset,
        });
        offset += (d.data().nrows() * n * 8) as u64;
    }
    let manifest = serde_json::to_vec(&Manifest {
        version: VERSION,
        subject_ids: set.subject_ids().to_vec(),
        entries,
    })?;

    let mut out = Vec::with_capacity(12 + manifest.len() + offset as usize + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for d in set.dictionaries().values() {
        let m = d.data();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&bytes[at..at + 8]);
    u64::from_le_bytes(buf)
}

fn verify_checksum(bytes: &[u8]) -> Result<()> {
    let body = &bytes[..bytes.len() - 8];
    let stored = read_u64(bytes, bytes.len() - 8);
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<DictionarySet> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("missing magic bytes".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::VersionMismatch {
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    if bytes.len() < 12 + 8 {
        return Err(Error::Truncated("file shorter than header".into()));
    }
    let manifest_len = read_u64(bytes, 4);
    let manifest_end = 12u64
        .checked_add(manifest_len)
        .filter(|&e| e + 8 <= bytes.len() as u64)
        .ok_or_else(|| Error::Truncated("manifest runs past end of file".into()))?
        as usize;
    let manifest: Manifest = match serde_json::from_slice(&bytes[12..manifest_end]) {
        Ok(m) => m,
        Err(e) => {
            verify_checksum(bytes)?;
            return Err(e.into());
        }
    };
    if manifest.version != VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.version.to_string(),
        });
    }
    let n = manifest.subject_ids.len();
    let data_len: usize = manifest.entries.iter().map(|e| 3 * e.t_points * n * 8).sum();
    let expected = manifest_end + data_len + 8;
    if bytes.len() < expected {
        return Err(Error::Truncated(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Invariant(format!(
            "{} trailing bytes after checksum",
            bytes.len() - expected
        )));
    }
    verify_checksum(bytes)?;

    let mut dictionaries = BTreeMap::new();
    let mut cursor = 0u64;
    for e in &manifest.entries {
        if e.offset != cursor {
            return Err(Error::Invariant(format!(
                "block of tooth {} at offset {} (expected {cursor})",
                e.label, e.offset
            )));
        }
        let rows = 3 * e.t_points;
        let start = manifest_end + e.offset as usize;
        let values: Vec<f64> = bytes[start..start + rows * n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let data = DMatrix::from_row_slice(rows, n, &values);
        let dict = ToothDictionary::from_matrix(e.label, data, manifest.subject_ids.clone())?;
        if dictionaries.insert(e.label, dict).is_some() {
            return Err(Error::DuplicateLabel(e.label));
        }
        cursor += (rows * n * 8) as u64;
    }
    DictionarySet::new(dictionaries)
}

pub fn save_dictionary_set(set: &DictionarySet, path: &Path) -> Result<()> {
    fs::write(path, encode(set)?).map_err(|e| Error::io(path, e))
}

pub fn load_dictionary_set(path: &Path) -> Result<DictionarySet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::CorrespondedTooth;
    use crate::dictionary::build_dictionary;
    use crate::geometry::PointCloud;

    fn sample_set(labels: usize) -> BTreeMap<ToothLabel, ToothDictionary> {
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let mut out = BTreeMap::new();
        for (i, label) in ToothLabel::all().take(labels).enumerate() {
            let teeth: Vec<CorrespondedTooth> = (0..3)
                .map(|j| CorrespondedTooth {
                    label,
                    cloud: PointCloud::from_coords(&[
                        [i as f64, j as f64 + 0.1, -1.5],
                        [1.0 / 3.0, 2.0f64.sqrt(), 1e-300],
                    ])
                    .unwrap(),
                })
                .collect();
            let refs: Vec<&CorrespondedTooth> = teeth.iter().collect();
            out.insert(label, build_dictionary(&ids, &refs).unwrap());
        }
        out
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let set = DictionarySet::new(sample_set(28)).unwrap();
        let bytes = encode(&set).unwrap();
        assert_eq!(&bytes[..4], b"TDS1");
        let back = decode(&bytes).unwrap();
        assert_eq!(back, set);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupted_data_byte_fails_checksum() {
        let set = DictionarySet::new(sample_set(28)).unwrap();
        let mut bytes = encode(&set).unwrap();
        let at = bytes.len() - 20;
        bytes[at] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn truncation_and_version() {
        let set = DictionarySet::new(sample_set(28)).unwrap();
        let bytes = encode(&set).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 9]), Err(Error::Truncated(_))));
        assert!(matches!(decode(&bytes[..10]), Err(Error::Truncated(_))));
        let mut other = bytes.clone();
        other[3] = b'2';
        assert!(matches!(decode(&other), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn twenty_seven_entries_rejected() {
        // hand-assemble a file with a valid checksum but only 27 teeth
        let dicts = sample_set(27);
        let n = 3;
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for (label, d) in &dicts {
            entries.push(ManifestEntry {
                label: *label,
                t_points: d.t_points(),
                offset,
            });
            offset += (d.data().nrows() * n * 8) as u64;
        }
        let manifest = serde_json::to_vec(&Manifest {
            version: VERSION,
            subject_ids: vec!["a".into(), "b".into(), "c".into()],
            entries,
        })
        .unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for d in dicts.values() {
            for r in 0..d.data().nrows() {
                for c in 0..n {
                    out.extend_from_slice(&d.data()[(r, c)].to_le_bytes());
                }
            }
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        assert!(matches!(decode(&out), Err(Error::Invariant(_))));
    }
}
