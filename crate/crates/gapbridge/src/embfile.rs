//! `EMB1` files on disk and the image/text pairing manifest.

use std::fs;
use std::path::{Path, PathBuf};

use gapbridge_core::emb::check_paired;
use gapbridge_core::EmbeddingMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let bytes = matrix.encode()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::decode(&bytes).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairManifest {
    pub image_path: String,
    pub text_path: String,
    pub alignment: String,
}

pub const BY_INDEX: &str = "by-index";

impl PairManifest {
    pub fn new(image_path: impl Into<String>, text_path: impl Into<String>) -> Self {
        Self {
            image_path: image_path.into(),
            text_path: text_path.into(),
            alignment: BY_INDEX.into(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        if m.alignment != BY_INDEX {
            return Err(Error::manifest(
                path,
                format!("unsupported alignment {:?}", m.alignment),
            ));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }
}

/// Loads both sides of a manifest and checks that they pair row by row.
/// Relative paths are taken relative to the manifest's directory.
pub fn load_paired(manifest_path: &Path) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let m = PairManifest::read(manifest_path)?;
    let images = read_embeddings(&resolve(manifest_path, &m.image_path))?;
    let texts = read_embeddings(&resolve(manifest_path, &m.text_path))?;
    check_paired(&images, &texts).map_err(|source| Error::File {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    Ok((images, texts))
}

pub(crate) fn resolve(manifest: &Path, target: &str) -> PathBuf {
    let t = Path::new(target);
    if t.is_absolute() {
        return t.to_path_buf();
    }
    manifest.parent().unwrap_or(Path::new("")).join(t)
}

/// `dir/stem_suffix.emb` next to a manifest, plus the name to record in it.
pub(crate) fn sibling_blob(manifest: &Path, suffix: &str) -> (PathBuf, String) {
    let stem = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = format!("{stem}_{suffix}.emb");
    (manifest.with_file_name(&name), name)
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
