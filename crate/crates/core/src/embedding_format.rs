//! On-disk format for descriptor sets.
//!
//! A set is stored as two adjacent files:
//!
//! * `<stem>.repa`: little-endian binary. The 17-byte header is the magic
//!   `REPA`, `format_version: u32`, `count: u32`, `dim: u32` and
//!   `dtype: u8` (0 = f32le). It is followed by `count * dim` f32 values
//!   in vector-major order and the 32-byte SHA-256 digest of those payload
//!   bytes.
//! * `<stem>.manifest.json`: the human-readable sidecar carrying the set
//!   name, role, ids and the extraction [`Manifest`].
//!
//! The digest covers the payload only, so renaming a set (a sidecar edit)
//! never invalidates the data.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"REPA";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32_LE: u8 = 0;
pub const HEADER_LEN: usize = 17;
pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("empty set: an embedding set needs at least one vector")]
    EmptySet,
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("vector buffer holds {actual} values, expected {expected} ({count} x {dim})")]
    ShapeMismatch {
        count: usize,
        dim: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{ids} ids supplied for {count} vectors")]
    IdCountMismatch { count: usize, ids: usize },
    #[error("duplicate video id {0:?}")]
    DuplicateId(String),
    #[error("non-finite value {value} at vector {index} ({id:?}), component {component}")]
    NonFinite {
        index: usize,
        id: String,
        component: usize,
        value: f32,
    },
    #[error("bad magic {0:?}, expected \"REPA\"")]
    BadMagic([u8; 4]),
    #[error("format version {found} is not supported (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated file: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{extra} unexpected bytes after the payload digest")]
    TrailingData { extra: usize },
    #[error("payload checksum mismatch: stored {stored}, computed {computed}")]
    ChecksumMismatch { stored: String, computed: String },
    #[error("manifest checksum {manifest} does not match payload digest {payload}")]
    ManifestChecksumMismatch { manifest: String, payload: String },
    #[error("manifest describes {manifest_count} x {manifest_dim}, binary holds {count} x {dim}")]
    ManifestShapeMismatch {
        manifest_count: usize,
        manifest_dim: usize,
        count: usize,
        dim: usize,
    },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("cannot parse manifest {path}: {source}")]
    ManifestParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("set too large for the u32 header fields")]
    TooLarge,
    #[error("dimension mismatch: real sets have dim {real}, generated sets dim {gen}")]
    DimMismatch { real: usize, gen: usize },
    #[error("extractor mismatch: real {real:?} vs generated {gen:?}")]
    ExtractorMismatch { real: String, gen: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl FormatError {
    /// Stable short code per failure kind.
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::EmptySet => "empty-set",
            FormatError::ZeroDim => "zero-dim",
            FormatError::ShapeMismatch { .. } => "shape-mismatch",
            FormatError::IdCountMismatch { .. } => "id-count-mismatch",
            FormatError::DuplicateId(_) => "duplicate-id",
            FormatError::NonFinite { .. } => "non-finite",
            FormatError::BadMagic(_) => "bad-magic",
            FormatError::VersionMismatch { .. } => "version-mismatch",
            FormatError::UnsupportedDtype(_) => "unsupported-dtype",
            FormatError::Truncated { .. } => "truncated",
            FormatError::TrailingData { .. } => "trailing-data",
            FormatError::ChecksumMismatch { .. } => "checksum-mismatch",
            FormatError::ManifestChecksumMismatch { .. } => "manifest-checksum-mismatch",
            FormatError::ManifestShapeMismatch { .. } => "manifest-shape-mismatch",
            FormatError::InvalidManifest(_) => "invalid-manifest",
            FormatError::ManifestParse { .. } => "manifest-parse",
            FormatError::TooLarge => "too-large",
            FormatError::DimMismatch { .. } => "dim-mismatch",
            FormatError::ExtractorMismatch { .. } => "extractor-mismatch",
            FormatError::Io { .. } => "io",
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, FormatError::Io { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetRole {
    Real,
    Generated,
}

impl fmt::Display for SetRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetRole::Real => f.write_str("real"),
            SetRole::Generated => f.write_str("generated"),
        }
    }
}

/// Per-video descriptors, stored vector-major in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    name: String,
    role: SetRole,
    dim: usize,
    vectors: Vec<f32>,
    ids: Vec<String>,
}

impl EmbeddingSet {
    /// Builds a set, checking every type invariant. An empty set is
    /// representable but cannot be written to disk.
    pub fn new(
        name: impl Into<String>,
        role: SetRole,
        dim: usize,
        vectors: Vec<f32>,
        ids: Vec<String>,
    ) -> Result<Self, FormatError> {
        if dim == 0 {
            return Err(FormatError::ZeroDim);
        }
        if !vectors.len().is_multiple_of(dim) {
            return Err(FormatError::ShapeMismatch {
                count: vectors.len() / dim,
                dim,
                expected: (vectors.len() / dim) * dim,
                actual: vectors.len(),
            });
        }
        let count = vectors.len() / dim;
        if ids.len() != count {
            return Err(FormatError::IdCountMismatch {
                count,
                ids: ids.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(FormatError::DuplicateId(id.clone()));
            }
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite {
                index: pos / dim,
                id: ids[pos / dim].clone(),
                component: pos % dim,
                value: vectors[pos],
            });
        }
        Ok(Self {
            name: name.into(),
            role,
            dim,
            vectors,
            ids,
        })
    }

    /// Convenience constructor from nested rows.
    pub fn from_rows(
        name: impl Into<String>,
        role: SetRole,
        rows: &[Vec<f32>],
        ids: Vec<String>,
    ) -> Result<Self, FormatError> {
        let dim = rows.first().map(Vec::len).ok_or(FormatError::EmptySet)?;
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(FormatError::ShapeMismatch {
                    count: rows.len(),
                    dim,
                    expected: rows.len() * dim,
                    actual: rows.iter().map(Vec::len).sum(),
                });
            }
            flat.extend_from_slice(row);
        }
        Self::new(name, role, dim, flat, ids)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> SetRole {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// New set holding the given rows in the given order.
    pub fn select(&self, indices: &[usize]) -> EmbeddingSet {
        let mut vectors = Vec::with_capacity(indices.len() * self.dim);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            vectors.extend_from_slice(self.vector(i));
            ids.push(self.ids[i].clone());
        }
        EmbeddingSet {
            name: self.name.clone(),
            role: self.role,
            dim: self.dim,
            vectors,
            ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSampling {
    pub frames_per_video: u32,
    pub strategy: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetLayout {
    pub rows: u32,
    pub cols: u32,
}

/// Extraction parameters recorded next to every descriptor set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub extractor: String,
    pub frame_sampling: FrameSampling,
    #[serde(default)]
    pub sheet_layout: Option<SheetLayout>,
    #[serde(default)]
    pub source_paths: Vec<String>,
    /// Hex SHA-256 of the payload. Filled in by the writer.
    #[serde(default)]
    pub checksum: String,
    pub format_version: u32,
}

impl Manifest {
    pub fn new(
        extractor: impl Into<String>,
        frames_per_video: u32,
        strategy: impl Into<String>,
    ) -> Self {
        Self {
            extractor: extractor.into(),
            frame_sampling: FrameSampling {
                frames_per_video,
                strategy: strategy.into(),
            },
            sheet_layout: None,
            source_paths: Vec::new(),
            checksum: String::new(),
            format_version: FORMAT_VERSION,
        }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if self.extractor.is_empty() {
            return Err(FormatError::InvalidManifest(
                "extractor tag is empty".into(),
            ));
        }
        let frames = self.frame_sampling.frames_per_video;
        if frames < 1 {
            return Err(FormatError::InvalidManifest(
                "frames_per_video must be at least 1".into(),
            ));
        }
        if let Some(layout) = self.sheet_layout {
            if u64::from(layout.rows) * u64::from(layout.cols) < u64::from(frames) {
                return Err(FormatError::InvalidManifest(format!(
                    "sheet layout {}x{} cannot hold {} frames",
                    layout.rows, layout.cols, frames
                )));
            }
        }
        Ok(())
    }
}

/// Sidecar file contents: set identity plus the manifest fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    name: String,
    role: SetRole,
    count: usize,
    dim: usize,
    ids: Vec<String>,
    #[serde(flatten)]
    manifest: Manifest,
}

/// A set read back from disk together with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub set: EmbeddingSet,
    pub manifest: Manifest,
}

/// Path of the manifest sidecar belonging to a binary file.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

pub fn payload_digest(payload: &[u8]) -> [u8; DIGEST_LEN] {
    Sha256::digest(payload).into()
}

fn payload_bytes(set: &EmbeddingSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(set.vectors.len() * 4);
    for v in &set.vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Encodes the binary part of a set. Fails before producing any bytes when
/// the set is empty or too large for the header.
pub fn encode(set: &EmbeddingSet) -> Result<Vec<u8>, FormatError> {
    if set.is_empty() {
        return Err(FormatError::EmptySet);
    }
    let count = u32::try_from(set.count()).map_err(|_| FormatError::TooLarge)?;
    let dim = u32::try_from(set.dim()).map_err(|_| FormatError::TooLarge)?;
    let payload = payload_bytes(set);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.push(DTYPE_F32_LE);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&payload_digest(&payload));
    Ok(out)
}

/// Raw contents of a binary file after header and digest checks.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPayload {
    pub count: usize,
    pub dim: usize,
    pub values: Vec<f32>,
    pub digest: [u8; DIGEST_LEN],
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Decodes and verifies the binary part. Finiteness is checked here too so
/// that no caller ever sees NaN or Inf.
pub fn decode(bytes: &[u8]) -> Result<DecodedPayload, FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = read_u32(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch { found: version });
    }
    let count = read_u32(bytes, 8) as usize;
    let dim = read_u32(bytes, 12) as usize;
    let dtype = bytes[16];
    if dtype != DTYPE_F32_LE {
        return Err(FormatError::UnsupportedDtype(dtype));
    }
    if count == 0 {
        return Err(FormatError::EmptySet);
    }
    if dim == 0 {
        return Err(FormatError::ZeroDim);
    }
    let payload_len = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or(FormatError::TooLarge)?;
    let expected = HEADER_LEN + payload_len + DIGEST_LEN;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingData {
            extra: bytes.len() - expected,
        });
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = &bytes[HEADER_LEN + payload_len..];
    let computed = payload_digest(payload);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch {
            stored: hex::encode(stored),
            computed: hex::encode(computed),
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite {
            index: pos / dim,
            id: String::new(),
            component: pos % dim,
            value: values[pos],
        });
    }
    Ok(DecodedPayload {
        count,
        dim,
        values,
        digest: computed,
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the binary file at `path` and its sidecar next to it. Returns the
/// manifest as written, with checksum and version filled in.
pub fn write_embedding_set(
    set: &EmbeddingSet,
    manifest: &Manifest,
    path: &Path,
) -> Result<Manifest, FormatError> {
    manifest.validate()?;
    let bytes = encode(set)?;
    let digest = &bytes[bytes.len() - DIGEST_LEN..];
    let mut manifest = manifest.clone();
    manifest.checksum = hex::encode(digest);
    manifest.format_version = FORMAT_VERSION;
    let sidecar = Sidecar {
        name: set.name.clone(),
        role: set.role,
        count: set.count(),
        dim: set.dim(),
        ids: set.ids.clone(),
        manifest: manifest.clone(),
    };
    let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    text.push('\n');
    fs::write(path, &bytes).map_err(io_err(path))?;
    let side = manifest_path(path);
    fs::write(&side, text).map_err(io_err(&side))?;
    Ok(manifest)
}

/// Reads and fully verifies a set and its sidecar.
pub fn read_embedding_set(path: &Path) -> Result<EmbeddingFile, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let decoded = decode(&bytes)?;
    let side = manifest_path(path);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|source| FormatError::ManifestParse {
            path: side.clone(),
            source,
        })?;
    if sidecar.manifest.format_version != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch {
            found: sidecar.manifest.format_version,
        });
    }
    sidecar.manifest.validate()?;
    let payload_hex = hex::encode(decoded.digest);
    if !sidecar.manifest.checksum.eq_ignore_ascii_case(&payload_hex) {
        return Err(FormatError::ManifestChecksumMismatch {
            manifest: sidecar.manifest.checksum,
            payload: payload_hex,
        });
    }
    if sidecar.count != decoded.count || sidecar.dim != decoded.dim {
        return Err(FormatError::ManifestShapeMismatch {
            manifest_count: sidecar.count,
            manifest_dim: sidecar.dim,
            count: decoded.count,
            dim: decoded.dim,
        });
    }
    let set = EmbeddingSet::new(
        sidecar.name,
        sidecar.role,
        decoded.dim,
        decoded.values,
        sidecar.ids,
    )?;
    Ok(EmbeddingFile {
        set,
        manifest: sidecar.manifest,
    })
}

/// Checks that two files can be compared: same dimension, same extractor.
pub fn validate_pair(real: &EmbeddingFile, gen: &EmbeddingFile) -> Result<(), FormatError> {
    if real.set.dim() != gen.set.dim() {
        return Err(FormatError::DimMismatch {
            real: real.set.dim(),
            gen: gen.set.dim(),
        });
    }
    if real.manifest.extractor != gen.manifest.extractor {
        return Err(FormatError::ExtractorMismatch {
            real: real.manifest.extractor.clone(),
            gen: gen.manifest.extractor.clone(),
        });
    }
    Ok(())
}
