//! Reverse-mapping manifests and the fitted-model directory:
//!
//! ```text
//! model.json      setting, flags, training config, file names
//! mapping.json    Gaussian parameters (+ mapping_mean.emb, mapping_chol.emb)
//! reverse.json    reverse mapping (+ reverse_w1.emb, ... reverse_b2.emb)
//! history.csv     per-step losses and learning rate
//! ```

use std::fs;
use std::path::Path;

use gapbridge_core::gapmap::MappingModule;
use gapbridge_core::revmap::ReverseMapping;
use gapbridge_core::trainer::{FittedModel, HistoryEntry, TrainConfig};
use gapbridge_core::{EmbeddingMatrix, Matrix};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfigFile;
use crate::embfile::{
    read_embeddings, read_json, resolve, sibling_blob, write_embeddings, write_json,
};
use crate::error::{Error, Result};
use crate::params::{read_params, write_params};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReverseManifest {
    pub dim: usize,
    pub expansion: usize,
    pub w1_path: String,
    pub b1_path: String,
    pub w2_path: String,
    pub b2_path: String,
}

fn write_blob(m: &Matrix, manifest: &Path, suffix: &str) -> Result<String> {
    let (file, name) = sibling_blob(manifest, suffix);
    write_embeddings(&EmbeddingMatrix::from_matrix(m, false)?, &file)?;
    Ok(name)
}

fn read_blob(manifest: &Path, name: &str, shape: (usize, usize)) -> Result<Matrix> {
    let path = resolve(manifest, name);
    let e = read_embeddings(&path)?;
    if (e.count(), e.dim()) != shape {
        return Err(Error::manifest(
            &path,
            format!(
                "expected {}x{}, found {}x{}",
                shape.0,
                shape.1,
                e.count(),
                e.dim()
            ),
        ));
    }
    Ok(e.to_matrix())
}

fn row(v: &[f64]) -> Result<Matrix> {
    Ok(Matrix::from_vec(1, v.len(), v.to_vec())?)
}

pub fn write_reverse(r: &ReverseMapping, path: &Path) -> Result<()> {
    let manifest = ReverseManifest {
        dim: r.dim,
        expansion: r.expansion,
        w1_path: write_blob(&r.w1, path, "w1")?,
        b1_path: write_blob(&row(&r.b1)?, path, "b1")?,
        w2_path: write_blob(&r.w2, path, "w2")?,
        b2_path: write_blob(&row(&r.b2)?, path, "b2")?,
    };
    write_json(&manifest, path)
}

pub fn read_reverse(path: &Path) -> Result<ReverseMapping> {
    let m: ReverseManifest = read_json(path)?;
    let (d, h) = (m.dim, m.dim * m.expansion);
    if d == 0 || h == 0 {
        return Err(Error::manifest(path, "dim and expansion must be positive"));
    }
    let w1 = read_blob(path, &m.w1_path, (h, d))?;
    let b1 = read_blob(path, &m.b1_path, (1, h))?.into_vec();
    let w2 = read_blob(path, &m.w2_path, (d, h))?;
    let b2 = read_blob(path, &m.b2_path, (1, d))?.into_vec();
    ReverseMapping::from_parts(d, m.expansion, w1, b1, w2, b2).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub const MODEL_FILE: &str = "model.json";
const MAPPING_FILE: &str = "mapping.json";
const REVERSE_FILE: &str = "reverse.json";
const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub setting: u8,
    pub dim: usize,
    pub mapping: String,
    pub trainable: bool,
    pub renormalize_after_map: bool,
    pub reverse: String,
    pub history: String,
    pub train_config: TrainConfigFile,
}

/// A fitted model together with how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub setting: u8,
    pub config: TrainConfig,
    pub model: FittedModel,
}

pub fn save_model(saved: &SavedModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = &saved.model;
    write_params(m.mapping.params(), &dir.join(MAPPING_FILE))?;
    write_reverse(&m.reverse, &dir.join(REVERSE_FILE))?;
    write_history(&m.history, &dir.join(HISTORY_FILE))?;
    write_json(
        &ModelManifest {
            setting: saved.setting,
            dim: m.reverse.dim,
            mapping: MAPPING_FILE.into(),
            trainable: m.mapping.is_trainable(),
            renormalize_after_map: m.mapping.renormalize_after_map,
            reverse: REVERSE_FILE.into(),
            history: HISTORY_FILE.into(),
            train_config: TrainConfigFile::from(&saved.config),
        },
        &dir.join(MODEL_FILE),
    )
}

pub fn load_model(dir: &Path) -> Result<SavedModel> {
    let path = dir.join(MODEL_FILE);
    let m: ModelManifest = read_json(&path)?;
    let params = read_params(&resolve(&path, &m.mapping))?;
    let mut mapping = if m.trainable {
        MappingModule::trainable(params)
    } else {
        MappingModule::fixed(params).map_err(|source| Error::File {
            path: path.clone(),
            source,
        })?
    };
    mapping.renormalize_after_map = m.renormalize_after_map;
    let reverse = read_reverse(&resolve(&path, &m.reverse))?;
    if reverse.dim != m.dim || mapping.params().dim() != m.dim {
        return Err(Error::manifest(&path, "component dimensions disagree"));
    }
    let history = read_history(&resolve(&path, &m.history))?;
    Ok(SavedModel {
        setting: m.setting,
        config: TrainConfig::from(&m.train_config),
        model: FittedModel {
            mapping,
            reverse,
            history,
        },
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct HistoryRecord {
    step: usize,
    loss_map: Option<f64>,
    loss_cosine: Option<f64>,
    loss_cl: Option<f64>,
    loss_disti: Option<f64>,
    lr: f64,
}

/// Unused loss terms are written as empty cells.
pub fn write_history(history: &[HistoryEntry], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if history.is_empty() {
        w.write_record([
            "step",
            "loss_map",
            "loss_cosine",
            "loss_cl",
            "loss_disti",
            "lr",
        ])
        .map_err(csv_err)?;
    }
    for h in history {
        w.serialize(HistoryRecord {
            step: h.step,
            loss_map: h.loss_map,
            loss_cosine: h.loss_cosine,
            loss_cl: h.loss_cl,
            loss_disti: h.loss_disti,
            lr: h.lr,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The diagonal trace is not persisted, so `min_chol_diag` reads back as
/// `None`.
pub fn read_history(path: &Path) -> Result<Vec<HistoryEntry>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize::<HistoryRecord>()
        .map(|rec| {
            let h = rec.map_err(csv_err)?;
            Ok(HistoryEntry {
                step: h.step,
                loss_map: h.loss_map,
                loss_cosine: h.loss_cosine,
                loss_cl: h.loss_cl,
                loss_disti: h.loss_disti,
                lr: h.lr,
                min_chol_diag: None,
            })
        })
        .collect()
}
