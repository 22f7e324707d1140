//! Evaluation reports (JSON) and residual histograms (CSV).

use std::path::Path;

use gapbridge_core::eval::{EvalReport, HistogramRow, HistogramSeries};
use serde::{Deserialize, Serialize};

use crate::embfile::{read_json, write_json};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub retrieval_at_1: f64,
    pub retrieval_at_5: f64,
    pub residual_kl: f64,
    pub simmatrix_div: f64,
    pub mean_pair_cosine: f64,
    pub notes: String,
}

impl From<&EvalReport> for ReportFile {
    fn from(r: &EvalReport) -> Self {
        Self {
            retrieval_at_1: r.retrieval_at_1,
            retrieval_at_5: r.retrieval_at_5,
            residual_kl: r.residual_kl,
            simmatrix_div: r.simmatrix_div,
            mean_pair_cosine: r.mean_pair_cosine,
            notes: r.notes.clone(),
        }
    }
}

impl From<ReportFile> for EvalReport {
    fn from(r: ReportFile) -> Self {
        EvalReport {
            retrieval_at_1: r.retrieval_at_1,
            retrieval_at_5: r.retrieval_at_5,
            residual_kl: r.residual_kl,
            simmatrix_div: r.simmatrix_div,
            mean_pair_cosine: r.mean_pair_cosine,
            notes: r.notes,
        }
    }
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    write_json(&ReportFile::from(report), path)
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    Ok(read_json::<ReportFile>(path)?.into())
}

/// Header `dim,bin_left,bin_right,count`; the pooled series is labelled
/// `global`.
pub fn write_histograms(rows: &[HistogramRow], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["dim", "bin_left", "bin_right", "count"])
        .map_err(csv_err)?;
    for r in rows {
        let dim = match r.series {
            HistogramSeries::Dim(d) => d.to_string(),
            HistogramSeries::Global => "global".into(),
        };
        w.write_record([
            dim,
            r.bin_left.to_string(),
            r.bin_right.to_string(),
            r.count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
