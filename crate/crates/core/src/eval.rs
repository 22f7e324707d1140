//! Gap-closure metrics: cross-modal retrieval, whitened-residual KL,
//! similarity-structure divergence, parameter recovery and residual
//! histograms.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gauss::{self, estimate_moments, Estimator, GaussianParams};
use crate::linalg::{self, Matrix};
use crate::revmap::{disti_loss, unit_rows, ReverseMapping};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub retrieval_at_1: f64,
    pub retrieval_at_5: f64,
    pub residual_kl: f64,
    pub simmatrix_div: f64,
    pub mean_pair_cosine: f64,
    pub notes: String,
}

/// Row-normalized copies of queries and targets, ready for
/// [`retrieval_hit`].
pub fn retrieval_prepare(queries: &Matrix, targets: &Matrix, k: usize) -> Result<(Matrix, Matrix)> {
    if queries.shape() != targets.shape() {
        return Err(Error::Pairing(format!(
            "queries {:?} vs targets {:?}",
            queries.shape(),
            targets.shape()
        )));
    }
    let n = queries.rows();
    if n < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: n,
        });
    }
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={n}")));
    }
    Ok((unit_rows(queries)?.0, unit_rows(targets)?.0))
}

/// Whether target `i` ranks within the top `k` for query `i` by cosine
/// similarity, ties going to the lower index.
pub fn retrieval_hit(unit_queries: &Matrix, unit_targets: &Matrix, i: usize, k: usize) -> bool {
    let q = unit_queries.row(i);
    let own = linalg::dot(q, unit_targets.row(i));
    let mut rank = 0;
    for j in 0..unit_targets.rows() {
        if j == i {
            continue;
        }
        let s = linalg::dot(q, unit_targets.row(j));
        if s > own || (s == own && j < i) {
            rank += 1;
            if rank >= k {
                return false;
            }
        }
    }
    true
}

/// Fraction of queries whose own target is among their `k` nearest targets.
pub fn retrieval_accuracy(queries: &Matrix, targets: &Matrix, k: usize) -> Result<f64> {
    let (uq, ut) = retrieval_prepare(queries, targets, k)?;
    let hits = (0..uq.rows())
        .filter(|&i| retrieval_hit(&uq, &ut, i, k))
        .count();
    Ok(hits as f64 / uq.rows() as f64)
}

/// KL to `N(0, I)` of the moments of `L⁻¹(image − text − μ)`.
pub fn residual_kl(images: &Matrix, texts: &Matrix, params: &GaussianParams) -> Result<f64> {
    if images.shape() != texts.shape() {
        return Err(Error::Pairing(format!(
            "images {:?} vs texts {:?}",
            images.shape(),
            texts.shape()
        )));
    }
    let eps = gauss::whiten(&images.sub(texts)?, params)?;
    let (m, s) = estimate_moments(&eps, Estimator::Biased)?;
    gauss::kl_to_standard(&m, &s)
}

/// Relational divergence between the internal similarity structures of `a`
/// and `b` (`b` is the reference distribution).
pub fn simmatrix_divergence(a: &Matrix, b: &Matrix, temp: f64) -> Result<f64> {
    Ok(disti_loss(a, b, temp)?.value)
}

/// Mean cosine similarity between aligned rows.
pub fn mean_pair_cosine(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Pairing(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            found: 0,
        });
    }
    let (ua, _) = unit_rows(a)?;
    let (ub, _) = unit_rows(b)?;
    let total: f64 = (0..a.rows())
        .map(|i| linalg::dot(ua.row(i), ub.row(i)))
        .sum();
    Ok(total / a.rows() as f64)
}

/// `(‖μ̂ − μ*‖∞, ‖Σ̂ − Σ*‖_F / ‖Σ*‖_F)`.
pub fn param_recovery_error(
    estimate: &GaussianParams,
    truth: &GaussianParams,
) -> Result<(f64, f64)> {
    if estimate.dim() != truth.dim() {
        return Err(Error::Shape {
            expected: (truth.dim(), truth.dim()),
            found: (estimate.dim(), estimate.dim()),
        });
    }
    let mean_linf = estimate
        .mean()
        .iter()
        .zip(truth.mean())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let st = truth.covariance();
    let cov_rel = estimate.covariance().sub(&st)?.frobenius_norm() / st.frobenius_norm();
    Ok((mean_linf, cov_rel))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistogramSeries {
    Dim(usize),
    /// All coordinates of all requested dimensions pooled.
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub series: HistogramSeries,
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

fn histogram(values: &[f64], bins: usize, series: HistogramSeries, out: &mut Vec<HistogramRow>) {
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if values.is_empty() {
        lo = 0.0;
        hi = 0.0;
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    for (b, &count) in counts.iter().enumerate() {
        let left = lo + b as f64 * width;
        let right = if b + 1 == bins {
            hi
        } else {
            lo + (b + 1) as f64 * width
        };
        out.push(HistogramRow {
            series,
            bin_left: left,
            bin_right: right,
            count,
        });
    }
}

/// Per-dimension histograms of `image − text`, plus one pooled series.
/// Each series is binned over its own `[min, max]`.
pub fn export_residual_histograms(
    images: &Matrix,
    texts: &Matrix,
    dims: &[usize],
    bins: usize,
) -> Result<Vec<HistogramRow>> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("no dimensions requested".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be at least 1".into()));
    }
    if images.shape() != texts.shape() {
        return Err(Error::Pairing(format!(
            "images {:?} vs texts {:?}",
            images.shape(),
            texts.shape()
        )));
    }
    if let Some(&bad) = dims.iter().find(|&&d| d >= images.cols()) {
        return Err(Error::InvalidArgument(format!(
            "dimension {bad} out of range for dim {}",
            images.cols()
        )));
    }
    let deltas = images.sub(texts)?;
    let mut rows = Vec::with_capacity((dims.len() + 1) * bins);
    let mut pooled = Vec::with_capacity(dims.len() * deltas.rows());
    for &d in dims {
        let col: Vec<f64> = deltas.row_iter().map(|r| r[d]).collect();
        histogram(&col, bins, HistogramSeries::Dim(d), &mut rows);
        pooled.extend_from_slice(&col);
    }
    histogram(&pooled, bins, HistogramSeries::Global, &mut rows);
    Ok(rows)
}

/// Scores a trained pipeline on held-out pairs: images go straight into
/// the reverse mapping and are matched against their texts.
pub fn evaluate_model(
    reverse: &ReverseMapping,
    params: &GaussianParams,
    images: &Matrix,
    texts: &Matrix,
    disti_temp: f64,
) -> Result<EvalReport> {
    let recon = reverse.forward(images)?;
    let n = texts.rows();
    Ok(EvalReport {
        retrieval_at_1: retrieval_accuracy(&recon, texts, 1)?,
        retrieval_at_5: retrieval_accuracy(&recon, texts, 5.min(n))?,
        residual_kl: residual_kl(images, texts, params)?,
        simmatrix_div: simmatrix_divergence(&recon, texts, disti_temp)?,
        mean_pair_cosine: mean_pair_cosine(&recon, texts)?,
        notes: format!("{n} pairs; queries = reverse(images), targets = texts"),
    })
}
