//! Content-addressed JSON artifacts.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Short hex digest identifying an artifact by its bytes.
pub fn content_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

/// Pretty JSON with a trailing newline; output is byte-stable for equal values.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `value` as JSON and returns its content id.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let bytes = to_json_bytes(value)?;
    write_bytes(path, &bytes)?;
    Ok(content_id(&bytes))
}

/// Reads a JSON artifact, returning it with its content id. A missing file is
/// reported as a missing artifact named `name`.
pub fn read_json<T: DeserializeOwned>(path: &Path, name: &'static str) -> Result<(T, String)> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact { name, path: path.to_path_buf() })
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Serde(format!("{name} at {}: {e}", path.display())))?;
    Ok((value, content_id(&bytes)))
}

/// Content id of an artifact file without parsing it.
pub fn file_id(path: &Path, name: &'static str) -> Result<String> {
    match std::fs::read(path) {
        Ok(b) => Ok(content_id(&b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact { name, path: path.to_path_buf() }),
        Err(e) => Err(Error::io(path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_track_content() {
        assert_eq!(content_id(b"abc"), content_id(b"abc"));
        assert_ne!(content_id(b"abc"), content_id(b"abd"));
        assert_eq!(content_id(b"abc").len(), 16);
    }

    #[test]
    fn json_round_trip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/x.json");
        let id = write_json(&path, &vec![0.1f64, 1e-300, -2.5]).unwrap();
        let (back, id2): (Vec<f64>, _) = read_json(&path, "x").unwrap();
        assert_eq!(back, vec![0.1, 1e-300, -2.5]);
        assert_eq!(id, id2);
        let missing = read_json::<Vec<f64>>(&dir.path().join("nope.json"), "thing").unwrap_err();
        assert!(matches!(missing, Error::MissingArtifact { name: "thing", .. }));
    }
}
