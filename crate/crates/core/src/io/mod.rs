//! Binary artifacts with plain-text headers, CSV emitters and config parsing.
//!
//! An artifact file is a UTF-8 header terminated by a `payload <n>` line,
//! followed by `n` little-endian `f64` values:
//!
//! ```text
//! acrom-artifact 1
//! kind snapshots
//! meta n_u 1234
//! sha256 <hex digest of the payload bytes>
//! payload 5678
//! ```

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use config::{
    parse_config, parse_config_str, resolve_relative, AnglesConfig, ConvergenceConfig, MeshConfig, PipelineConfig,
    PodConfig, Reference, RomRunConfig,
};

pub const ARTIFACT_MAGIC: &str = "acrom-artifact";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Mesh,
    Snapshots,
    Basis,
    Trajectory,
    Checkpoint,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Mesh => "mesh",
            ArtifactKind::Snapshots => "snapshots",
            ArtifactKind::Basis => "basis",
            ArtifactKind::Trajectory => "trajectory",
            ArtifactKind::Checkpoint => "checkpoint",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mesh" => ArtifactKind::Mesh,
            "snapshots" => ArtifactKind::Snapshots,
            "basis" => ArtifactKind::Basis,
            "trajectory" => ArtifactKind::Trajectory,
            "checkpoint" => ArtifactKind::Checkpoint,
            _ => return None,
        })
    }
}

/// Parsed artifact header. Metadata values are single-line strings.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactHeader {
    pub version: u32,
    pub kind: ArtifactKind,
    pub meta: BTreeMap<String, String>,
    pub hash: String,
    pub len: usize,
}

impl ArtifactHeader {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    /// Metadata value parsed into `V`, or a format error naming the key.
    pub fn parse<V: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<V> {
        self.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(path, format!("missing or invalid metadata `{key}`")))
    }

    pub fn expect_kind(&self, kind: ArtifactKind, path: &Path) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::format(
                path,
                format!("expected a {} artifact, found {}", kind.as_str(), self.kind.as_str()),
            ))
        }
    }
}

/// Hex SHA-256 of arbitrary bytes.
pub fn hash_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn hash_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

fn payload_bytes(payload: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

/// Hash of a payload as stored on disk.
pub fn payload_hash(payload: &[f64]) -> String {
    hash_bytes(&payload_bytes(payload))
}

/// Serializes an artifact into memory.
pub fn encode_artifact(kind: ArtifactKind, meta: &BTreeMap<String, String>, payload: &[f64]) -> Vec<u8> {
    let bytes = payload_bytes(payload);
    let mut header = format!("{ARTIFACT_MAGIC} {ARTIFACT_VERSION}\nkind {}\n", kind.as_str());
    for (k, v) in meta {
        debug_assert!(!k.contains(char::is_whitespace) && !v.contains('\n'));
        let _ = writeln!(header, "meta {k} {v}");
    }
    let _ = writeln!(header, "sha256 {}", hash_bytes(&bytes));
    let _ = writeln!(header, "payload {}", payload.len());
    let mut out = header.into_bytes();
    out.extend_from_slice(&bytes);
    out
}

/// Writes an artifact atomically (temporary file, then rename).
pub fn write_artifact(
    path: impl AsRef<Path>,
    kind: ArtifactKind,
    meta: &BTreeMap<String, String>,
    payload: &[f64],
) -> Result<()> {
    write_atomic(path.as_ref(), &encode_artifact(kind, meta, payload))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_artifact(path: impl AsRef<Path>) -> Result<(ArtifactHeader, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_artifact(&bytes, path)
}

pub fn decode_artifact(bytes: &[u8], path: &Path) -> Result<(ArtifactHeader, Vec<f64>)> {
    let fail = |reason: &str| Error::format(path, reason);
    let mut pos = 0usize;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fail("truncated header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| fail("header is not UTF-8"))
    };

    let first = next_line()?;
    let mut parts = first.split_whitespace();
    if parts.next() != Some(ARTIFACT_MAGIC) {
        return Err(fail("missing artifact header"));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| fail("missing format version"))?;
    if version != ARTIFACT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            expected: ARTIFACT_VERSION,
        });
    }
    let kind_line = next_line()?;
    let kind = kind_line
        .strip_prefix("kind ")
        .and_then(ArtifactKind::parse)
        .ok_or_else(|| fail("missing or unknown artifact kind"))?;

    let mut meta = BTreeMap::new();
    let hash;
    loop {
        let line = next_line()?;
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.insert(k.to_string(), v.to_string());
        } else if let Some(h) = line.strip_prefix("sha256 ") {
            hash = h.trim().to_string();
            break;
        } else {
            return Err(fail("unexpected header line"));
        }
    }
    let len: usize = next_line()?
        .strip_prefix("payload ")
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| fail("missing payload length"))?;

    let body = &bytes[pos..];
    if body.len() != len * 8 {
        return Err(fail(&format!("payload has {} bytes, expected {}", body.len(), len * 8)));
    }
    if hash_bytes(body) != hash {
        return Err(Error::HashMismatch {
            path: path.to_path_buf(),
        });
    }
    let payload = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((
        ArtifactHeader {
            version,
            kind,
            meta,
            hash,
            len,
        },
        payload,
    ))
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a numeric CSV table with a header row.
pub fn write_csv(path: impl AsRef<Path>, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_atomic(path.as_ref(), csv_string(columns, rows).as_bytes())
}

pub fn csv_string(columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = columns.join(",");
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Reads a numeric CSV written by [`write_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty CSV"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, format!("row {}: non-numeric cell", i + 1)))?;
        if row.len() != header.len() {
            return Err(Error::format(path, format!("row {}: wrong column count", i + 1)));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (BTreeMap<String, String>, Vec<f64>) {
        let mut meta = BTreeMap::new();
        meta.insert("rows".to_string(), "3".to_string());
        meta.insert("note".to_string(), "two words".to_string());
        (meta, vec![1.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0, 1e300])
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        let (meta, payload) = sample();
        write_artifact(&path, ArtifactKind::Basis, &meta, &payload).unwrap();
        let (h, back) = read_artifact(&path).unwrap();
        assert_eq!(h.kind, ArtifactKind::Basis);
        assert_eq!(h.meta, meta);
        assert_eq!(h.get("note"), Some("two words"));
        let bits: Vec<u64> = payload.iter().map(|v| v.to_bits()).collect();
        let back_bits: Vec<u64> = back.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, back_bits);
    }

    #[test]
    fn corruption_truncation_and_version_are_reported() {
        let (meta, payload) = sample();
        let bytes = encode_artifact(ArtifactKind::Trajectory, &meta, &payload);
        let p = Path::new("x");

        let mut corrupt = bytes.clone();
        let last = corrupt.len() - 3;
        corrupt[last] ^= 0x40;
        assert!(matches!(decode_artifact(&corrupt, p), Err(Error::HashMismatch { .. })));

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(decode_artifact(truncated, p), Err(Error::Format { .. })));
        assert!(matches!(decode_artifact(&bytes[..10], p), Err(Error::Format { .. })));

        let mut old = bytes.clone();
        old[ARTIFACT_MAGIC.len() + 1] = b'7';
        assert!(matches!(
            decode_artifact(&old, p),
            Err(Error::UnsupportedVersion { found: 7, .. })
        ));
    }

    #[test]
    fn encoding_is_deterministic() {
        let (meta, payload) = sample();
        assert_eq!(
            encode_artifact(ArtifactKind::Mesh, &meta, &payload),
            encode_artifact(ArtifactKind::Mesh, &meta, &payload)
        );
    }

    #[test]
    fn csv_round_trips_doubles() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![vec![0.1, 1.0 / 3.0], vec![-2.5e-300, std::f64::consts::PI]];
        write_csv(&path, &["a", "b"], &rows).unwrap();
        let (header, back) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["a", "b"]);
        assert_eq!(back, rows);
    }
}
