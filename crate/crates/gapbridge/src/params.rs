//! Gaussian parameters as a JSON manifest plus two `EMB1` blobs: the mean
//! (1×d) and the Cholesky factor (d×d, row-major, zeros above the diagonal).

use std::path::Path;

use gapbridge_core::gauss::Provenance;
use gapbridge_core::{EmbeddingMatrix, GaussianParams, Matrix};
use serde::{Deserialize, Serialize};

use crate::embfile::{
    read_embeddings, read_json, resolve, sibling_blob, write_embeddings, write_json,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussManifest {
    pub dim: usize,
    pub provenance: String,
    pub mean_path: String,
    pub chol_path: String,
}

/// Writes `path` and its `<stem>_mean.emb` / `<stem>_chol.emb` siblings.
pub fn write_params(params: &GaussianParams, path: &Path) -> Result<()> {
    let d = params.dim();
    let mean = Matrix::from_vec(1, d, params.mean().to_vec())?;
    let (mean_file, mean_name) = sibling_blob(path, "mean");
    let (chol_file, chol_name) = sibling_blob(path, "chol");
    write_embeddings(&EmbeddingMatrix::from_matrix(&mean, false)?, &mean_file)?;
    write_embeddings(
        &EmbeddingMatrix::from_matrix(params.chol(), false)?,
        &chol_file,
    )?;
    write_json(
        &GaussManifest {
            dim: d,
            provenance: params.provenance().as_str().into(),
            mean_path: mean_name,
            chol_path: chol_name,
        },
        path,
    )
}

pub fn read_params(path: &Path) -> Result<GaussianParams> {
    let m: GaussManifest = read_json(path)?;
    let provenance = Provenance::parse(&m.provenance)
        .ok_or_else(|| Error::manifest(path, format!("unknown provenance {:?}", m.provenance)))?;
    let mean = read_embeddings(&resolve(path, &m.mean_path))?;
    let chol = read_embeddings(&resolve(path, &m.chol_path))?;
    if (mean.count(), mean.dim()) != (1, m.dim) || (chol.count(), chol.dim()) != (m.dim, m.dim) {
        return Err(Error::manifest(
            path,
            format!(
                "blob shapes {}x{} and {}x{} do not match dim {}",
                mean.count(),
                mean.dim(),
                chol.count(),
                chol.dim(),
                m.dim
            ),
        ));
    }
    GaussianParams::new(mean.to_matrix().into_vec(), chol.to_matrix(), provenance).map_err(
        |source| Error::File {
            path: path.to_path_buf(),
            source,
        },
    )
}
