//! Versioned binary artifacts: a fixed header followed by a bincode payload.
//!
//! Header layout: 8-byte magic, schema version byte, kind byte and the
//! 32-byte SHA-256 digest of the inputs the payload was computed from.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"COHERENT";
pub const SCHEMA_VERSION: u8 = 1;
const HEADER_LEN: usize = 8 + 1 + 1 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ArtifactKind {
    Panel = 1,
    Archive = 2,
}

impl ArtifactKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Self::Panel),
            2 => Some(Self::Archive),
            _ => None,
        }
    }
}

pub type Digest32 = [u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub version: u8,
    pub kind: ArtifactKind,
    pub input_hash: Digest32,
}

/// Incremental SHA-256 over length-prefixed parts, so part boundaries
/// affect the digest.
#[derive(Default, Clone)]
pub struct InputHasher(Sha256);

impl InputHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn part(mut self, bytes: &[u8]) -> Self {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn finish(self) -> Digest32 {
        self.0.finalize().into()
    }
}

/// SHA-256 of a whole file.
pub fn file_digest(path: &Path) -> Result<Digest32> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).into())
}

pub fn encode<T: Serialize>(kind: ArtifactKind, input_hash: &Digest32, payload: &T) -> Result<Vec<u8>> {
    let body = bincode::serialize(payload).map_err(|e| Error::Artifact {
        path: Default::default(),
        message: e.to_string(),
    })?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.push(SCHEMA_VERSION);
    out.push(kind as u8);
    out.extend_from_slice(input_hash);
    out.extend_from_slice(&body);
    Ok(out)
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<ArtifactHeader> {
    let bad = |message: String| Error::Artifact {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not an artifact file (bad magic)".into()));
    }
    if bytes[8] != SCHEMA_VERSION {
        return Err(bad(format!(
            "schema version {} unsupported; expected {SCHEMA_VERSION}",
            bytes[8]
        )));
    }
    let kind = ArtifactKind::from_byte(bytes[9]).ok_or_else(|| bad(format!("unknown kind {}", bytes[9])))?;
    let mut input_hash = [0u8; 32];
    input_hash.copy_from_slice(&bytes[10..HEADER_LEN]);
    Ok(ArtifactHeader {
        version: bytes[8],
        kind,
        input_hash,
    })
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8], kind: ArtifactKind, path: &Path) -> Result<(ArtifactHeader, T)> {
    let header = parse_header(bytes, path)?;
    if header.kind != kind {
        return Err(Error::Artifact {
            path: path.to_path_buf(),
            message: format!("expected a {kind:?} artifact, found {:?}", header.kind),
        });
    }
    let payload = bincode::deserialize(&bytes[HEADER_LEN..]).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok((header, payload))
}

pub fn write_artifact<T: Serialize>(path: &Path, kind: ArtifactKind, input_hash: &Digest32, payload: &T) -> Result<()> {
    let bytes = encode(kind, input_hash, payload).map_err(|e| match e {
        Error::Artifact { message, .. } => Error::Artifact {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_artifact<T: DeserializeOwned>(path: &Path, kind: ArtifactKind) -> Result<(ArtifactHeader, T)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, kind, path)
}

/// Header of an existing artifact, or `None` if the file is absent or unreadable.
pub fn peek_header(path: &Path) -> Option<ArtifactHeader> {
    let bytes = fs::read(path).ok()?;
    parse_header(&bytes, path).ok()
}
